"""Focal length and z-shift recovery from an affine point map, and metric assembly."""

from __future__ import annotations

import math

import numpy as np

from .errors import GeometryError, RecoveryError
from .geometry import CameraModel, PointMap, as_mask, pixel_grid

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _reprojection(t, xy, z, uv):
    """Best focal and squared residual for shift ``t``.

    With ``q = xy / (z + t)`` the optimal focal is ``<q, uv> / <q, q>``.
    """
    q = xy / (z + t)[:, None]
    qq = float(np.sum(q * q))
    qu = float(np.sum(q * uv))
    f = qu / qq
    res = float(np.sum((f * q - uv) ** 2))
    return f, res


def recover_focal_shift(pm: PointMap, mask=None, *, n_scan=128, rel_tol=1e-6,
                        max_rel_residual=1e-2) -> CameraModel:
    """Recover a single focal length ``f`` and a z-shift ``t`` such that
    ``f * (x, y) / (z + t)`` reprojects onto the pixel centers.

    The principal point is the image center. For fixed ``t`` the focal is
    closed-form; ``t`` is located by a coarse scan over
    ``(-min z + eps, 64 * median z]`` followed by golden-section search.

    Raises :class:`RecoveryError` when the depths do not vary (a fronto-parallel
    plane leaves focal and distance ambiguous) or the fit is poor.
    """
    m = pm.mask if mask is None else pm.mask & as_mask(mask, pm.shape)
    H, W = pm.shape
    u, v = pixel_grid(H, W)
    uv = np.stack([u[m] - W / 2.0, v[m] - H / 2.0], axis=1)
    P = pm.points[m]
    if P.shape[0] < 8:
        raise RecoveryError("camera recovery needs at least 8 valid points")
    xy, z = P[:, :2], P[:, 2]
    zmed = float(np.median(z))
    scale = float(np.max(np.abs(P))) or 1.0
    if np.ptp(z) <= 1e-9 * scale:
        raise RecoveryError("focal and distance are ambiguous: all points share one depth",
                            residual=None)
    eps = 1e-6 * abs(zmed) if zmed != 0 else 1e-6 * scale
    lo = -float(z.min()) + eps
    hi = 64.0 * abs(zmed) if zmed > 0 else 64.0 * scale

    # coarse scan is uniform in log(z_min + t) so near-singular shifts are resolved
    span = np.geomspace(eps, hi + float(z.min()), n_scan)
    ts = span - float(z.min())
    res = np.array([_reprojection(t, xy, z, uv)[1] for t in ts])
    k = int(np.argmin(res))
    a = ts[max(k - 1, 0)]
    b = ts[min(k + 1, n_scan - 1)]
    tol = rel_tol * abs(zmed if zmed != 0 else scale)
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    rc, rd = _reprojection(c, xy, z, uv)[1], _reprojection(d, xy, z, uv)[1]
    while b - a > tol:
        if rc <= rd:
            b, d, rd = d, c, rc
            c = b - _GOLDEN * (b - a)
            rc = _reprojection(c, xy, z, uv)[1]
        else:
            a, c, rc = c, d, rd
            d = a + _GOLDEN * (b - a)
            rd = _reprojection(d, xy, z, uv)[1]
    t = 0.5 * (a + b)
    f, r = _reprojection(t, xy, z, uv)
    total = float(np.sum(uv * uv))
    # flat residual curve: every shift fits equally well
    if np.max(res) - r <= 1e-12 * max(total, 1.0):
        raise RecoveryError("focal and distance are ambiguous: residual does not depend on shift",
                            residual=r)
    if not f > 0 or r > max_rel_residual * total:
        raise RecoveryError(f"camera recovery failed (focal={f:.6g})", residual=r / max(total, 1e-300))
    return CameraModel(f, f, W / 2.0, H / 2.0, float(t))


def reprojection_residual(pm: PointMap, focal: float, z_shift: float, mask=None) -> float:
    """Sum of squared pixel reprojection errors for a given focal and shift."""
    m = pm.mask if mask is None else pm.mask & as_mask(mask, pm.shape)
    H, W = pm.shape
    u, v = pixel_grid(H, W)
    uv = np.stack([u[m] - W / 2.0, v[m] - H / 2.0], axis=1)
    P = pm.points[m]
    q = P[:, :2] / (P[:, 2] + z_shift)[:, None]
    return float(np.sum((focal * q - uv) ** 2))


def assemble_metric(pm: PointMap, scale: float) -> PointMap:
    """Multiply an affine point map by a positive metric scale."""
    if not scale > 0:
        raise GeometryError(f"metric scale must be positive, got {scale}")
    return PointMap(pm.points * float(scale), pm.mask, "metric")
