"""Filtering boundary artifacts out of real depth, then filling the gaps."""

# %%
import numpy as np

from geoalign import DepthMap, depth_to_points, detect_outliers, refine_pipeline, synth
from geoalign.refine import schedule_regions

depth, gt, mask, cam = synth.render(synth.street_scene(0))

# %% Real depth with edges smeared by two pixels, and a prediction that is
# twice the ground truth with a slow drift in log-depth.
art = synth.ArtifactSpec("boundary_shift", {"shift": 2})
real, real_mask, footprint = synth.inject(depth, mask, art)
pred = synth.biased_prediction(gt, 2.0, 0.15)

# %% Local alignment finds the artifacts; one global alignment cannot
# absorb the drift and flags clean pixels too.
real_pts = depth_to_points(DepthMap(real.values, real_mask), cam)
regions = schedule_regions(pred, real_mask)
clean = real_mask & ~footprint
for mode in ("local", "global"):
    hit = detect_outliers(pred, real_pts, regions, mode=mode).union
    print(f"{mode:6s} recall {np.mean(hit[footprint]):.3f}  clean FPR {np.mean(hit[clean]):.4f}")

# %% Full pipeline: filter, then complete in log-depth guided by the prediction.
res = refine_pipeline(real, real_mask, pred, cam)
err = np.abs(res.depth.values - depth.values)[res.mask] / depth.values[res.mask]
print({k: v for k, v in res.to_dict().items() if k != "per_region_counts"})
print("median relative error after refinement:", np.median(err))
