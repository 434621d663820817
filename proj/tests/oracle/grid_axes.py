import numpy as np, pipeline_proto as pp, time

base = dict(epochs=400, lr=5e-3, decay_at=280, n_train=8)
t0 = time.time()
print("== sigma axis (l1_cos)", flush=True)
for sg in [0.3, 0.5, 1.0]:
    es = [pp.run("l1_cos", s, sigma=sg, **base) for s in [0, 1, 2]]
    print("  sigma=%.1f %s mean=%.4f" % (sg, ["%.3f" % e for e in es], np.mean(es)), flush=True)
print("== d_ext axis (l1_cos, endpoint scenes)", flush=True)
for de in [0, 16]:
    es = [pp.run("l1_cos", s, d_ext=de, scene="endpoint", eval_scene="endpoint", **base) for s in [0, 1, 2]]
    print("  d_ext=%d %s mean=%.4f" % (de, ["%.3f" % e for e in es], np.mean(es)), flush=True)
print("== upsample axis (l1_cos)", flush=True)
for um in ["bilinear", "trilinear"]:
    es = [pp.run("l1_cos", s, up_mode=um, **base) for s in [0, 1, 2]]
    print("  %s %s mean=%.4f" % (um, ["%.3f" % e for e in es], np.mean(es)), flush=True)
print("total %.1fs" % (time.time() - t0))
