"""Rel and delta1 under every alignment protocol, plus boundary F1."""

# %%
import numpy as np

from geoalign import DepthMap, PointMap, boundary_f1, evaluate_suite, synth

depth, gt, mask, cam = synth.render(synth.random_scene(7))
rng = np.random.default_rng(7)

# %% A noisy prediction known only up to scale and shift.
noisy = gt.points * (1.0 + 0.03 * rng.normal(size=gt.points.shape))
pred = PointMap((noisy - [0.1, 0.2, 0.5]) / 2.0, gt.mask)
for proto, b in evaluate_suite(pred, gt, mask).items():
    print(f"{proto:22s} rel {b.rel:8.3f}  delta1 {b.delta1:7.2f}")

# %% Boundary F1 drops once occluding edges move.
art = synth.ArtifactSpec("boundary_shift", {"shift": 2})
real, real_mask, _ = synth.inject(depth, mask, art)
print("F1 of gt vs gt     :", boundary_f1(depth, depth, mask))
print("F1 of shifted edges:", boundary_f1(DepthMap(real.values), depth, mask & real_mask))
