#!/usr/bin/env python3
"""Reference for the equal-L1 / different-EPE vector pair used in the
loss-landscape scan: move eps mass from the peak to peak+1 vs peak+5."""
import numpy as np


def gaussian_target(mu, sigma, bins):
    i = np.arange(bins)
    w = np.exp(-((i - mu) ** 2) / (2 * sigma ** 2))
    return w / w.sum()


def l1(p, q):
    return float(np.abs(p - q).mean())


def negcos(p, q):
    return float(-(p @ q) / (np.linalg.norm(p) * np.linalg.norm(q)))


def combined(p, q, lam=0.5):
    return l1(p, q) + lam * negcos(p, q)


bins = 48
q = gaussian_target(20.0, 0.5, bins)
peak = int(q.argmax())
eps = 0.15

for j in (1, 5):
    p = q.copy()
    p[peak] -= eps
    p[peak + j] += eps
    epe = abs(float(p @ np.arange(bins)) - float(q @ np.arange(bins)))
    print("j=%d: l1=%.12f combined=%.12f epe=%.12f" % (j, l1(p, q), combined(p, q), epe))

p1 = q.copy(); p1[peak] -= eps; p1[peak + 1] += eps
p5 = q.copy(); p5[peak] -= eps; p5[peak + 5] += eps
print("l1 equal:", l1(p1, q) == l1(p5, q))
print("epe diff:", abs(0.15 * 1 - 0.15 * 5))
print("combined diff:", abs(combined(p1, q) - combined(p5, q)))
