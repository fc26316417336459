"""Robust alignment of affine-invariant point maps, local mismatch filtering of
real depth, log-space Poisson completion, focal recovery and evaluation."""

from .align import (AffineAlignment, AlignProblem, apply_disparity_alignment, solve_depth_scale_l1,
                    solve_depth_scale_shift_l1, solve_disparity_affine_lsq, solve_scale_l1,
                    solve_scale_shift_l1, solve_shift_l1, weighted_median)
from .camera import assemble_metric, recover_focal_shift
from .config import RunConfig
from .errors import (AlignmentError, DataError, GeoAlignError, GeometryError, RecoveryError,
                     RegionError, SolverError, StageError)
from .geometry import (CameraModel, DepthMap, DisparityMap, PointMap, depth_to_points,
                       inverse_depth_weights, points_to_depth)
from .losses import SphereRegion, loss_global, loss_multiscale, loss_scale, sample_sphere_regions
from .metrics import MetricBundle, boundary_f1, evaluate, evaluate_suite
from .refine import (CompletionProblem, OutlierReport, RefineConfig, detect_outliers, filter_mask,
                     poisson_complete, refine_pipeline, sample_pred_regions)

__version__ = "0.1.0"
