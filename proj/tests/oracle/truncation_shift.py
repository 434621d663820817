#!/usr/bin/env python3
"""Reference values for endpoint truncation of a discrete Gaussian.

mass_deficit = 1 - sum_{x=lo..hi} g(x)/Zinf, Zinf over |x-mu| <= |mu|+12*sigma+12
expectation_shift = E[renormalized on lo..hi] - mu
"""
import mpmath as mp

mp.mp.dps = 50


def analyze(mu, sigma, lo, hi):
    g = lambda x: mp.e ** (-((x - mu) ** 2) / (2 * sigma ** 2))
    r = abs(mu) + 12 * sigma + 12
    xs = range(int(mp.ceil(mu - r)), int(mp.floor(mu + r)) + 1)
    zinf = mp.fsum(g(x) for x in xs)
    w = [g(x) for x in range(lo, hi + 1)]
    s = mp.fsum(w)
    deficit = 1 - s / zinf
    e = mp.fsum(wi * x for wi, x in zip(w, range(lo, hi + 1))) / s
    return deficit, e - mu


for mu in [0, 1, 2, 3, 4, 5]:
    d, sh = analyze(mp.mpf(mu), mp.mpf("0.5"), 0, 47)
    print("mu=%d sigma=0.5: deficit=%s shift=%s" % (mu, mp.nstr(d, 10), mp.nstr(sh, 10)))

# symmetric truncation at grid center
d, sh = analyze(mp.mpf("23.5"), mp.mpf("0.5"), 0, 47)
print("mu=23.5 center: shift=%s" % mp.nstr(sh, 10))

# endpoint direction at hi end
d, sh = analyze(mp.mpf(47), mp.mpf("0.5"), 0, 47)
print("mu=47 (hi): shift=%s" % mp.nstr(sh, 10))
