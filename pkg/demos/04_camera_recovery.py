"""Recovering focal length and depth shift from an affine-invariant point map."""

# %%
from geoalign import CameraModel, PointMap, assemble_metric, depth_to_points, recover_focal_shift, synth

spec = synth.random_scene(5)
depth = synth.render(spec)[0]

# %% Unproject with a known focal, then lose the z offset.
for focal in (200.0, 500.0, 1200.0):
    pm = depth_to_points(depth, CameraModel.centered(focal, spec.width, spec.height))
    shifted = pm.points.copy()
    shifted[..., 2] -= 1.0
    cam = recover_focal_shift(PointMap(shifted, pm.mask))
    print(f"true f {focal:7.1f}  recovered f {cam.fx:10.4f}  z shift {cam.z_shift:+.6f}")

# %% With a metric scale from elsewhere, the map becomes metric.
metric = assemble_metric(pm, 2.5)
print("metric depth range:", metric.points[..., 2].min(), metric.points[..., 2].max())
