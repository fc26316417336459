"""Relative-error / inlier metrics under each alignment protocol, and boundary F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import align as _al
from .errors import DataError, RegionError
from .geometry import DepthMap, PointMap, as_mask, points_to_depth

PROTOCOLS = (
    "scale_inv_point",
    "affine_inv_point",
    "local_point",
    "scale_inv_depth",
    "affine_inv_depth",
    "affine_inv_disparity",
    "metric_point",
    "metric_depth",
    "metric_depth_gt_cam",
)
POINT_PROTOCOLS = ("scale_inv_point", "affine_inv_point", "local_point", "metric_point")

POINT_DELTA = 0.25
DEPTH_DELTA = 1.25
F1_THRESHOLDS = (5, 10, 15, 20, 25)


@dataclass(frozen=True)
class MetricBundle:
    """``rel`` and ``delta1`` are percentages."""

    rel: float
    delta1: float
    n_valid: int
    protocol: str = None
    alignment: object = None
    n_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "rel": float(self.rel),
            "delta1": float(self.delta1),
            "n_valid": int(self.n_valid),
            "n_excluded": int(self.n_excluded),
            "alignment": None if self.alignment is None else self.alignment.to_dict(),
        }


def _mask_for(pred, gt, mask):
    if pred.shape != gt.shape:
        raise DataError(f"grid mismatch {pred.shape} vs {gt.shape}")
    m = pred.mask & gt.mask
    if mask is not None:
        m = m & as_mask(mask, gt.shape)
    return m


def _point_stats(P, G):
    norm = np.linalg.norm(G, axis=-1)
    ok = norm > 0
    ratio = np.linalg.norm(P[ok] - G[ok], axis=-1) / norm[ok]
    return ratio, int((~ok).sum())


def rel_delta_point(pred: PointMap, gt: PointMap, mask=None, protocol=None, alignment=None) -> MetricBundle:
    """Mean ``||p_pred - p|| / ||p||`` and share of pixels with that ratio below 0.25.

    Pixels with ``||p|| = 0`` are excluded and counted in ``n_excluded``.
    """
    m = _mask_for(pred, gt, mask)
    ratio, excluded = _point_stats(pred.points[m], gt.points[m])
    return _bundle(ratio, ratio < POINT_DELTA, excluded, protocol, alignment)


def rel_delta_depth(pred: DepthMap, gt: DepthMap, mask=None, protocol=None, alignment=None) -> MetricBundle:
    """Mean ``|z_pred - z| / z`` and share with ``max(z_pred/z, z/z_pred) < 1.25``.

    Pixels with non-positive ground truth are excluded and counted.
    """
    m = _mask_for(pred, gt, mask)
    zp, zg = pred.values[m], gt.values[m]
    ok = zg > 0
    zp, zg = zp[ok], zg[ok]
    rel = np.abs(zp - zg) / zg
    with np.errstate(divide="ignore", invalid="ignore"):
        mx = np.maximum(zp / zg, zg / zp)
    inlier = (zp > 0) & (mx < DEPTH_DELTA)
    return _bundle(rel, inlier, int((~ok).sum()), protocol, alignment)


def _bundle(rel, inlier, excluded, protocol, alignment):
    n = int(rel.size)
    if n == 0:
        raise DataError("no valid pixels to evaluate")
    return MetricBundle(100.0 * float(np.mean(rel)), 100.0 * float(np.mean(inlier)), n,
                        protocol, alignment, excluded)


def _as_depth(x):
    return points_to_depth(x) if isinstance(x, PointMap) else x


def _depth_weights(gt_depth: DepthMap, m):
    w = np.zeros(gt_depth.shape)
    ok = m & (gt_depth.values > 0)
    w[ok] = 1.0 / gt_depth.values[ok]
    return w, ok


def evaluate(pred, gt, mask=None, protocol="affine_inv_point", *, z_max=None, regions=None,
             **solver_kw) -> MetricBundle:
    """Align ``pred`` to ``gt`` under ``protocol`` and measure Rel / delta1.

    Point protocols expect :class:`PointMap` inputs. Depth protocols accept
    depth maps or point maps (their z channel). For ``affine_inv_disparity``
    ``pred`` is a disparity map and ``gt`` a depth map; aligned disparities are
    truncated at ``1/z_max`` (default: the largest ground-truth depth).
    ``local_point`` averages per-region metrics over ``regions`` (default: the
    seeded schedule from :func:`geoalign.losses.default_regions`).
    """
    if protocol not in PROTOCOLS:
        raise DataError(f"unknown protocol {protocol!r}")
    if protocol in POINT_PROTOCOLS:
        if not (isinstance(pred, PointMap) and isinstance(gt, PointMap)):
            raise DataError(f"protocol {protocol} needs point maps")
        m = _mask_for(pred, gt, mask)
        gz = gt.points[..., 2]
        ok = m & (gz > 0)
        w = np.zeros(gt.shape)
        w[ok] = 1.0 / gz[ok]
        X, Y, ww = pred.points[ok], gt.points[ok], w[ok]
        if protocol == "local_point":
            return _local_point(pred, gt, ok, w, regions, **solver_kw)
        if protocol == "scale_inv_point":
            al = _al.solve_scale_l1(X, Y, ww)
        elif protocol == "affine_inv_point":
            al = _al.solve_scale_shift_l1(X, Y, ww, **solver_kw)
        else:
            al = _al.solve_shift_l1(X, Y, ww)
        aligned = PointMap(al.apply(pred.points), pred.mask, pred.frame)
        return rel_delta_point(aligned, gt, ok, protocol, al)

    gt_d = _as_depth(gt)
    if protocol == "affine_inv_disparity":
        if isinstance(pred, PointMap):
            raise DataError("affine_inv_disparity needs a disparity map as pred")
        m = _mask_for(pred, gt_d, mask)
        ok = m & (gt_d.values > 0)
        gt_disp = np.zeros(gt_d.shape)
        gt_disp[ok] = 1.0 / gt_d.values[ok]
        al = _al.solve_disparity_affine_lsq(pred.values[ok], gt_disp[ok])
        if z_max is None:
            z_max = float(gt_d.values[ok].max())
        aligned = _al.apply_disparity_alignment(DepthMap(pred.values, ok), al, z_max)
        return rel_delta_depth(aligned, gt_d, ok, protocol, al)

    pred_d = _as_depth(pred)
    m = _mask_for(pred_d, gt_d, mask)
    if protocol in ("metric_depth", "metric_depth_gt_cam"):
        return rel_delta_depth(pred_d, gt_d, m, protocol, None)
    w, ok = _depth_weights(gt_d, m)
    X, Y = pred_d.values[ok], gt_d.values[ok]
    if protocol == "scale_inv_depth":
        al = _al.solve_scale_l1(X, Y, w[ok])
    else:
        al = _al.solve_scale_shift_l1(X, Y, w[ok], **solver_kw)
    aligned = DepthMap(al.apply(pred_d.values), pred_d.mask)
    return rel_delta_depth(aligned, gt_d, ok, protocol, al)


def _local_point(pred, gt, ok, w, regions, **solver_kw):
    from .losses import default_regions

    if regions is None:
        regions = default_regions(gt, ok)
    P = pred.points.reshape(-1, 3)
    G = gt.points.reshape(-1, 3)
    okf = ok.ravel()
    wf = w.ravel()
    rels, deltas, counts = [], [], 0
    excluded = 0
    for reg in regions:
        mem = reg.members[okf[reg.members]]
        if mem.size < 2:
            continue
        try:
            al = _al.solve_scale_shift_l1(P[mem], G[mem], wf[mem], **solver_kw)
        except _al.AlignmentError:
            continue
        ratio, exc = _point_stats(al.apply(P[mem]), G[mem])
        excluded += exc
        if ratio.size == 0:
            continue
        rels.append(float(np.mean(ratio)))
        deltas.append(float(np.mean(ratio < POINT_DELTA)))
        counts += ratio.size
    if not rels:
        raise RegionError("no usable region for local_point evaluation")
    return MetricBundle(100.0 * float(np.mean(rels)), 100.0 * float(np.mean(deltas)), counts,
                        "local_point", None, excluded)


def evaluate_suite(pred: PointMap, gt: PointMap, mask=None, *, z_max=None, regions=None,
                   protocols=None, **solver_kw) -> dict:
    """Every protocol applicable to a predicted point map.

    Depth protocols use the z channel; the disparity protocol uses ``1/z`` of the
    prediction where it is positive.
    """
    out = {}
    for proto in protocols or PROTOCOLS:
        if proto == "affine_inv_disparity":
            z = pred.points[..., 2]
            pos = pred.mask & (z > 0)
            disp = np.where(pos, 1.0 / np.where(pos, z, 1.0), 0.0)
            out[proto] = evaluate(DepthMap(disp, pos), gt, mask, proto, z_max=z_max)
        else:
            out[proto] = evaluate(pred, gt, mask, proto, z_max=z_max, regions=regions, **solver_kw)
    return out


# ----------------------------------------------------------------------------
# boundary sharpness
# ----------------------------------------------------------------------------

_DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0))


def _shifted_pairs(a, dr, dc):
    """Views ``(a[r, c], a[r+dr, c+dc])`` over every in-image pair."""
    H, W = a.shape
    r0, r1 = max(0, -dr), H - max(0, dr)
    c0, c1 = max(0, -dc), W - max(0, dc)
    return a[r0:r1, c0:c1], a[r0 + dr:r1 + dr, c0 + dc:c1 + dc]


def occlusion_edges(depth, mask, ratio):
    """Directional occluding-contour maps: for each of the four neighbor
    directions, pairs where the neighbor is more than ``ratio`` times farther."""
    out = []
    for dr, dc in _DIRECTIONS:
        here, nb = _shifted_pairs(depth, dr, dc)
        mh, mn = _shifted_pairs(mask, dr, dc)
        valid = mh & mn
        with np.errstate(divide="ignore", invalid="ignore"):
            e = valid & (nb > ratio * here) & (here > 0)
        out.append(e)
    return out


def _directional_mean(pairs):
    ratios = [hit / total for hit, total in pairs if total > 0]
    return float(np.mean(ratios)) if ratios else 1.0


def boundary_f1(pred_depth, gt_depth, mask=None, thresholds=F1_THRESHOLDS) -> float:
    """Scale-invariant boundary F1 (percent), averaged over relative thresholds.

    At threshold ``t`` a depth edge is a neighbor pair whose depth ratio
    exceeds ``1 + t/100``. Recall is averaged over the neighbor directions
    that have ground-truth edges, precision over those that have predicted
    edges; a term with no edges in any direction counts as perfect.
    """
    pd = pred_depth.values if isinstance(pred_depth, DepthMap) else np.asarray(pred_depth, float)
    gd = gt_depth.values if isinstance(gt_depth, DepthMap) else np.asarray(gt_depth, float)
    if pd.shape != gd.shape:
        raise DataError(f"grid mismatch {pd.shape} vs {gd.shape}")
    m = np.isfinite(pd) & np.isfinite(gd)
    if isinstance(pred_depth, DepthMap):
        m &= pred_depth.mask
    if isinstance(gt_depth, DepthMap):
        m &= gt_depth.mask
    if mask is not None:
        m &= as_mask(mask, gd.shape)
    pd = np.where(m, pd, 1.0)
    gd = np.where(m, gd, 1.0)
    scores = []
    for i, t in enumerate(thresholds):
        ratio = 1.0 + t / 100.0
        eg = occlusion_edges(gd, m, ratio)
        ep = occlusion_edges(pd, m, ratio)
        if i == 0 and sum(int(e.sum()) for e in eg) == 0:
            raise DataError("boundary F1 is undefined: ground truth has no edges")
        rec = _directional_mean([((a & b).sum(), b.sum()) for a, b in zip(ep, eg)])
        pre = _directional_mean([((a & b).sum(), a.sum()) for a, b in zip(ep, eg)])
        scores.append(0.0 if rec + pre == 0 else 2 * rec * pre / (rec + pre))
    return 100.0 * float(np.mean(scores))
