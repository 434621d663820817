#!/usr/bin/env python3
"""Desk-scale prototype of the trainable stereo pipeline; used to calibrate
scene difficulty and verify the directional training comparisons before the
library build. Mirrors the planned module structure 1:1."""
import numpy as np


# ---------- synthetic data ----------
def gen_sample(seed, H=32, W=32, d_max=48, scene="standard", period=12):
    rng = np.random.RandomState(seed)
    right = rng.rand(H, W)
    if scene in ("standard", "ambiguous"):
        band = (H // 4, 3 * H // 4) if scene == "ambiguous" else (H // 3, H // 2)
        for y in range(*band):
            row = rng.rand(period)
            right[y] = np.tile(row, W // period + 1)[:W]
    # disparity field: 2 fronto planes + 1 slanted
    d = np.zeros((H, W))
    if scene == "endpoint":
        levels = [rng.uniform(0, 1.0), rng.uniform(0, 2.0), rng.uniform(1, 3)]
    else:
        levels = [rng.uniform(2, 8), rng.uniform(6, 14), rng.uniform(10, 15)]
    d[:, :] = levels[0]
    x0, x1 = sorted(rng.randint(4, W - 4, size=2))
    if x1 - x0 < 4:
        x1 = min(W - 1, x0 + 6)
    d[:, x0:x1] = levels[1]
    y0 = rng.randint(4, H - 8)
    xs = np.arange(W)
    slant = levels[2] - 5.0 * xs / W
    d[y0:y0 + 6, :] = np.clip(slant, 0, d_max - 1)
    d = np.round(d * 4) / 4  # quarter-pixel quantized gt

    # left by gather: left(x) = right(x - d(x)); linear interp
    left = np.zeros((H, W))
    valid = np.ones((H, W), bool)
    for y in range(H):
        t = np.arange(W) - d[y]
        lo = np.floor(t).astype(int)
        fr = t - lo
        ok = (t >= 0) & (lo + 1 <= W - 1)
        li = np.clip(lo, 0, W - 1)
        left[y] = (1 - fr) * right[y, li] + fr * right[y, np.clip(lo + 1, 0, W - 1)]
        left[y, ~ok] = rng.rand((~ok).sum())
        valid[y] &= ok
        # z-buffer occlusion: keep max-d per rounded target col
        tr = np.round(t).astype(int)
        best = {}
        for x in range(W):
            if not valid[y, x]:
                continue
            k = tr[x]
            if k in best and d[y, best[k]] >= d[y, x]:
                valid[y, x] = False
            elif k in best:
                valid[y, best[k]] = False
                best[k] = x
            else:
                best[k] = x
    return left, right, d, valid


# ---------- features + cost volume ----------
def downsample4(img):
    H, W = img.shape
    return img.reshape(H // 4, 4, W // 4, 4).mean(axis=(1, 3))


def patch_features(img):  # 5x5 zero-mean patches, zero pad
    H, W = img.shape
    pad = np.zeros((H + 4, W + 4))
    pad[2:-2, 2:-2] = img
    feats = np.zeros((25, H, W))
    k = 0
    for dy in range(5):
        for dx in range(5):
            feats[k] = pad[dy:dy + H, dx:dx + W]
            k += 1
    feats -= feats.mean(axis=0, keepdims=True)
    return feats


def cost_volume(left, right, d_ext=16, d_max=48):
    fl = patch_features(downsample4(left))
    fr = patch_features(downsample4(right))
    C, H, W = fl.shape
    bins = (d_max + 2 * d_ext) // 4
    vol = np.zeros((bins, H, W))
    nl = np.sqrt((fl * fl).mean(axis=0))
    nr = np.sqrt((fr * fr).mean(axis=0))
    for dbin in range(bins):
        dpx = (-d_ext + 4 * dbin) // 4
        for x in range(W):
            xs = x - dpx
            if 0 <= xs < W:
                vol[dbin, :, x] = (fl[:, :, x] * fr[:, :, xs]).mean(axis=0) / (nl[:, x] * nr[:, xs] + 1e-9)
    return vol


# ---------- autodiff-free forward/backward (hand rolled, mirrors tape ops) ----------
def conv3(x, w, b):  # x[ci,h,w], w[co,ci,3,3]
    ci, H, W = x.shape
    co = w.shape[0]
    xp = np.zeros((ci, H + 2, W + 2))
    xp[:, 1:-1, 1:-1] = x
    out = np.zeros((co, H, W))
    for dy in range(3):
        for dx in range(3):
            out += np.einsum('oi,ihw->ohw', w[:, :, dy, dx], xp[:, dy:dy + H, dx:dx + W])
    return out + b[:, None, None]


def conv3_bwd(x, w, gout):
    ci, H, W = x.shape
    xp = np.zeros((ci, H + 2, W + 2))
    xp[:, 1:-1, 1:-1] = x
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for dy in range(3):
        for dx in range(3):
            gw[:, :, dy, dx] = np.einsum('ohw,ihw->oi', gout, xp[:, dy:dy + H, dx:dx + W])
            gxp[:, dy:dy + H, dx:dx + W] += np.einsum('oi,ohw->ihw', w[:, :, dy, dx], gout)
    return gxp[:, 1:-1, 1:-1], gw, gout.sum(axis=(1, 2))


def up_weights(n_in, n_out):
    W = np.zeros((n_out, n_in))
    if n_out == 1 or n_in == 1:
        W[:, 0] = 1
        return W
    for j in range(n_out):
        t = j * (n_in - 1) / (n_out - 1)
        k = min(int(t), n_in - 2)
        W[j, k] = 1 - (t - k)
        W[j, k + 1] = t - k
    return W


def knot_weights(n_in, f):
    n_out = (n_in - 1) * f + 1
    W = np.zeros((n_out, n_in))
    for j in range(n_out):
        k, t = divmod(j, f)
        if t == 0:
            W[j, k] = 1
        else:
            W[j, k] = 1 - t / f
            W[j, k + 1] = t / f
    return W


class Refiner:
    def __init__(self, bins, hidden, seed):
        rng = np.random.RandomState(seed + 7777)
        self.w1 = rng.randn(hidden, bins, 3, 3) * (0.1 / np.sqrt(bins * 9))
        self.b1 = np.zeros(hidden)
        self.w2 = rng.randn(bins, hidden, 3, 3) * (0.1 / np.sqrt(hidden * 9))
        self.b2 = np.zeros(bins)
        self.tau = np.array([6.0])

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2, self.tau]


def forward_backward(model, vol, q, mask, mode, lam, up_mode, d_ext, f=4):
    bins, Hq, Wq = vol.shape
    h1 = conv3(vol, model.w1, model.b1)
    r1 = np.maximum(h1, 0)
    h2 = conv3(r1, model.w2, model.b2)
    logits_c = model.tau[0] * vol + h2
    # upsample
    Uy = up_weights(Hq, Hq * f)
    if up_mode == "trilinear":
        Ud = knot_weights(bins, f)
        z = np.einsum('DB,Bhw->Dhw', Ud, logits_c)
    else:
        z = logits_c
    z = np.einsum('Hh,dhw->dHw', Uy, z)
    z = np.einsum('Ww,dHw->dHW', Uy, z)
    D = z.shape[0]
    zm = z - z.max(axis=0, keepdims=True)
    e = np.exp(zm)
    p = e / e.sum(axis=0, keepdims=True)
    nval = mask.sum()
    vals = (-d_ext + np.arange(D) * (4 if up_mode == "bilinear" else 1)).astype(float)
    pred = np.einsum('dHW,d->HW', p, vals)
    gt_full = q["gt"]
    if mode == "smooth_l1":
        err = pred - gt_full
        a = np.abs(err)
        loss = np.where(a < 1, 0.5 * err ** 2, a - 0.5)
        loss = (loss * mask).sum() / nval
        dpred = np.where(a < 1, err, np.sign(err)) * mask / nval
        gp = dpred[None] * vals[:, None, None]
    else:
        qt = q["field"]  # [D,H,W]
        if mode == "ce":
            pf = np.maximum(p, 1e-12)
            loss = (-(qt * np.log(pf)).sum(axis=0) * mask).sum() / nval
            gp = -(qt / pf) * mask[None] / nval
        else:
            l1 = (np.abs(p - qt).mean(axis=0) * mask).sum() / nval
            gl1 = np.sign(p - qt) / D * mask[None] / nval
            if mode == "l1":
                loss, gp = l1, gl1
            else:
                pn = np.sqrt((p * p).sum(axis=0))
                qn = np.sqrt((qt * qt).sum(axis=0))
                dot = (p * qt).sum(axis=0)
                cosv = dot / (pn * qn + 1e-300)
                loss = l1 + lam * (-(cosv * mask).sum() / nval)
                gcos = (qt / (pn * qn)[None] - dot[None] * p / (pn ** 3 * qn)[None])
                gp = gl1 + lam * (-gcos) * mask[None] / nval
    # softmax backward
    gz = p * (gp - (gp * p).sum(axis=0, keepdims=True))
    gz = np.einsum('Ww,dHW->dHw', Uy, gz)
    gz = np.einsum('Hh,dHw->dhw', Uy, gz)
    if up_mode == "trilinear":
        gz = np.einsum('DB,Dhw->Bhw', Ud, gz)
    glogits = gz
    gtau = np.array([(glogits * vol).sum()])
    gr1, gw2, gb2 = conv3_bwd(r1, model.w2, glogits)
    gh1 = gr1 * (h1 > 0)
    _, gw1, gb1 = conv3_bwd(vol, model.w1, gh1)
    metrics = dict(epe=(np.abs(pred - gt_full) * mask).sum() / nval)
    return loss, [gw1, gb1, gw2, gb2, gtau], metrics, pred


def gaussian_field(gt, mask, sigma, bins, d_ext, stride):
    D = bins
    mu = (gt + d_ext) / stride
    i = np.arange(D)[:, None, None]
    ex = -((i - mu[None]) ** 2) / (2 * sigma ** 2)
    ex -= ex.max(axis=0, keepdims=True)
    w = np.exp(ex)
    return w / w.sum(axis=0, keepdims=True)


def adamw(params, grads, m, v, t, lr, b1=0.9, b2=0.999, wd=1e-2, eps=1e-8):
    for i, (p, g) in enumerate(zip(params, grads)):
        m[i] = b1 * m[i] + (1 - b1) * g
        v[i] = b2 * v[i] + (1 - b2) * g * g
        mh = m[i] / (1 - b1 ** t)
        vh = v[i] / (1 - b2 ** t)
        p -= lr * (mh / (np.sqrt(vh) + eps) + wd * p)


def run(mode, seed, up_mode="bilinear", sigma=0.5, lam=0.5, d_ext=16,
        epochs=500, lr=5e-3, decay_at=350, decay=0.1, n_train=6, n_eval=8, full_batch=True, scene="standard",
        eval_scene="ambiguous", d_max=48):
    bins = (d_max + 2 * d_ext) // 4
    train = [gen_sample(1000 + seed * 97 + i, scene=scene) for i in range(n_train)]
    evals = [gen_sample(500000 + i, scene=eval_scene) for i in range(n_eval)]
    model = Refiner(bins, 16, seed)
    ms = [np.zeros_like(p) for p in model.params()]
    vs = [np.zeros_like(p) for p in model.params()]
    f = 4
    D_fine = (bins - 1) * f + 1
    data = []
    for (L, R, gt, val) in train:
        vol = cost_volume(L, R, d_ext, d_max)
        if up_mode == "trilinear":
            field = gaussian_field(gt, val, sigma * f, D_fine, d_ext, 1)
        else:
            field = gaussian_field(gt, val, sigma, bins, d_ext, 4)
        data.append((vol, dict(gt=gt, field=field), val))
    t = 0
    for ep in range(epochs):
        tot = 0.0
        lr_t = lr * (decay if ep >= decay_at else 1.0)
        if full_batch:
            acc = [np.zeros_like(p) for p in model.params()]
            for (vol, q, maskv) in data:
                loss, grads, _, _ = forward_backward(model, vol, q, maskv, mode, lam, up_mode, d_ext)
                for a, g in zip(acc, grads):
                    a += g / len(data)
                tot += loss
            t += 1
            adamw(model.params(), acc, ms, vs, t, lr_t)
        else:
            for (vol, q, maskv) in data:
                loss, grads, _, _ = forward_backward(model, vol, q, maskv, mode, lam, up_mode, d_ext)
                t += 1
                adamw(model.params(), grads, ms, vs, t, lr_t)
                tot += loss
    # eval
    epes = []
    for (L, R, gt, val) in evals:
        vol = cost_volume(L, R, d_ext, d_max)
        q = dict(gt=gt, field=None)
        if up_mode == "trilinear":
            q["field"] = gaussian_field(gt, val, sigma * 4, D_fine, d_ext, 1)
        else:
            q["field"] = gaussian_field(gt, val, sigma, bins, d_ext, 4)
        _, _, mtr, _ = forward_backward(model, vol, q, val, "smooth_l1" if mode == "smooth_l1" else mode, lam, up_mode, d_ext)
        epes.append(mtr["epe"])
    return float(np.mean(epes))


if __name__ == "__main__":
    import sys
    which = sys.argv[1] if len(sys.argv) > 1 else "loss"
    seeds = [0, 1, 2]
    if which == "loss":
        for mode in ["ce", "l1", "l1_cos", "smooth_l1"]:
            es = [run(mode, s) for s in seeds]
            print("%-10s epe=%s mean=%.4f" % (mode, ["%.3f" % e for e in es], np.mean(es)))
    elif which == "sigma":
        for sg in [0.3, 0.5, 1.0]:
            es = [run("l1_cos", s, sigma=sg) for s in seeds]
            print("sigma=%.1f epe=%s mean=%.4f" % (sg, ["%.3f" % e for e in es], np.mean(es)))
    elif which == "dext":
        for de in [0, 16]:
            es = [run("l1_cos", s, d_ext=de, scene="endpoint", eval_scene="endpoint") for s in seeds]
            print("d_ext=%d epe=%s mean=%.4f" % (de, ["%.3f" % e for e in es], np.mean(es)))
    elif which == "up":
        for um in ["bilinear", "trilinear"]:
            es = [run("l1_cos", s, up_mode=um) for s in seeds]
            print("%s epe=%s mean=%.4f" % (um, ["%.3f" % e for e in es], np.mean(es)))
