"""Supervision objectives: global robust L1, multi-scale local sphere losses,
and the log-scale regression target for a separate metric-scale head."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .align import AffineAlignment, solve_scale_shift_l1
from .errors import AlignmentError, GeometryError, RegionError
from .geometry import PointMap, as_mask


@dataclass(frozen=True)
class SphereRegion:
    """Pixels (flat indices) whose 3-D points lie within ``radius`` of the center's point."""

    center_index: int
    radius: float
    members: np.ndarray

    def __len__(self):
        return int(self.members.size)


@dataclass(frozen=True)
class LossReport:
    value: float
    alignment: AffineAlignment = None
    region_count: int = 1
    skipped_regions: int = 0
    region_alignments: tuple = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "value": float(self.value),
            "alignment": None if self.alignment is None else self.alignment.to_dict(),
            "region_count": int(self.region_count),
            "skipped_regions": int(self.skipped_regions),
        }


def _flat_points(pm: PointMap):
    return pm.points.reshape(-1, 3)


def sample_sphere_regions(gt: PointMap, mask, centers, radii) -> list[SphereRegion]:
    """Sphere regions in the point space of ``gt``.

    ``centers`` are flat pixel indices and ``radii`` one radius per center (or a
    single radius for all). Membership is the exact test
    ``||p_i - p_center|| <= r``; the k-d tree only proposes candidates from a
    slightly inflated ball.
    """
    m = as_mask(mask, gt.shape) & gt.mask
    P = _flat_points(gt)
    flat_mask = m.ravel()
    centers = np.atleast_1d(np.asarray(centers, dtype=np.int64))
    radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), centers.shape)
    if centers.size and (centers.min() < 0 or centers.max() >= flat_mask.size):
        raise RegionError("region center index outside the image")
    bad = ~flat_mask[centers]
    if bad.any():
        raise RegionError(f"region center {int(centers[bad][0])} lies outside the mask")
    if np.any(~(radii > 0)):
        raise RegionError("region radii must be positive")
    idx = np.flatnonzero(flat_mask)
    tree = cKDTree(P[idx])
    out = []
    for c, r in zip(centers, radii):
        cand = idx[tree.query_ball_point(P[c], r * (1 + 1e-9) + 1e-300)]
        dist = np.sqrt(np.sum((P[cand] - P[c]) ** 2, axis=1))
        members = np.sort(cand[dist <= r])
        out.append(SphereRegion(int(c), float(r), members))
    return out


def bounding_radius(pm: PointMap, mask=None) -> float:
    """Radius of the sphere around the masked centroid enclosing all masked points."""
    m = pm.mask if mask is None else as_mask(mask, pm.shape) & pm.mask
    P = pm.points[m]
    if P.size == 0:
        raise RegionError("empty mask")
    return float(np.max(np.linalg.norm(P - P.mean(axis=0), axis=1)))


def default_regions(pm: PointMap, mask, n_centers=64, radius_fractions=(1 / 16, 1 / 4, 1.0),
                    seed=0) -> list[SphereRegion]:
    """Seeded region schedule: ``n_centers`` random mask pixels per radius fraction
    of the bounding-sphere radius."""
    m = as_mask(mask, pm.shape) & pm.mask
    idx = np.flatnonzero(m.ravel())
    if idx.size == 0:
        raise RegionError("empty mask")
    rng = np.random.default_rng(seed)
    R = bounding_radius(pm, m)
    centers, radii = [], []
    for frac in radius_fractions:
        centers.append(rng.choice(idx, size=n_centers, replace=True))
        radii.append(np.full(n_centers, frac * R))
    return sample_sphere_regions(pm, m, np.concatenate(centers), np.concatenate(radii))


def _gt_weights(gt: PointMap, m):
    z = gt.points[..., 2]
    if np.any(~(z[m] > 0)):
        raise GeometryError("ground-truth depth must be positive on the mask")
    w = np.zeros(gt.shape)
    w[m] = 1.0 / z[m]
    return w.ravel()


def _weighted_l1(pred_pts, gt_pts, w, align):
    r = np.abs(align.scale * pred_pts + align.shift - gt_pts)
    return float(np.sum(w[:, None] * r))


def loss_global(pred: PointMap, gt: PointMap, mask=None, **solver_kw) -> LossReport:
    """Inverse-depth weighted L1 distance after optimal scale-and-shift alignment."""
    m = _joint(pred, gt, mask)
    if not m.any():
        raise GeometryError("loss needs a nonempty mask")
    w = _gt_weights(gt, m).reshape(gt.shape)[m]
    X, Y = pred.points[m], gt.points[m]
    al = solve_scale_shift_l1(X, Y, w, **solver_kw)
    return LossReport(_weighted_l1(X, Y, w, al), al, 1)


def _joint(pred, gt, mask):
    if pred.shape != gt.shape:
        raise GeometryError(f"grid mismatch {pred.shape} vs {gt.shape}")
    m = pred.mask & gt.mask
    if mask is not None:
        m = m & as_mask(mask, gt.shape)
    return m


def loss_multiscale(pred: PointMap, gt: PointMap, mask, regions, **solver_kw) -> LossReport:
    """Sum of per-region robust losses, each with its own alignment.

    Weights are the global ``1/z`` of the ground truth. Regions with fewer
    than two usable members, or with no defined scale, are skipped and counted.
    """
    if len(regions) == 0:
        raise RegionError("loss_multiscale needs at least one region")
    m = _joint(pred, gt, mask).ravel()
    w = _gt_weights(gt, m.reshape(gt.shape))
    P, G = _flat_points(pred), _flat_points(gt)
    values, aligns = [], []
    skipped = 0
    for reg in regions:
        mem = reg.members[m[reg.members]]
        if mem.size < 2:
            skipped += 1
            continue
        try:
            al = solve_scale_shift_l1(P[mem], G[mem], w[mem], **solver_kw)
        except AlignmentError:
            skipped += 1
            continue
        values.append(_weighted_l1(P[mem], G[mem], w[mem], al))
        aligns.append(al)
    return LossReport(math.fsum(values), None, len(values), skipped, tuple(aligns))


def loss_scale(pred_log_scale: float, pred: PointMap, gt: PointMap, mask=None, **solver_kw) -> LossReport:
    """Squared log-space error of a predicted metric scale.

    The target ``s*`` is the optimal scale between ``pred`` and ``gt``; it is a
    constant with respect to ``pred_log_scale``.
    """
    m = _joint(pred, gt, mask)
    w = _gt_weights(gt, m).reshape(gt.shape)[m]
    al = solve_scale_shift_l1(pred.points[m], gt.points[m], w, **solver_kw)
    target = math.log(al.scale)
    return LossReport((float(pred_log_scale) - target) ** 2, al, 1)
