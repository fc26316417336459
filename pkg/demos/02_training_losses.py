"""Global, multi-scale and scale losses on a synthetic scene."""

# %%
import numpy as np

from geoalign import PointMap, loss_global, loss_multiscale, loss_scale, synth
from geoalign.losses import default_regions

depth, gt, mask, cam = synth.render(synth.random_scene(3))

# %% An affine copy of the ground truth costs nothing under the global loss.
pred = PointMap((gt.points - [0.3, 0.0, 1.0]) / 4.0, gt.mask)
print("global, affine copy:", loss_global(pred, gt, mask).value)

# %% A locally wrong prediction: one corner pushed back in depth.
bent = pred.points.copy()
bent[:16, :16, 2] *= 1.2
bent = PointMap(bent, gt.mask)
regions = default_regions(gt, mask)
print("global, bent       :", loss_global(bent, gt, mask).value)
print("multiscale, bent   :", loss_multiscale(bent, gt, mask, regions).value)

# %% The scale loss compares a predicted log-scale with the aligned one.
for s in (0.0, np.log(4.0), 2.0):
    print(f"scale loss at log s={s:.3f}:", loss_scale(s, pred, gt, mask).value)
