"""Robust weighted-L1 alignment solvers and least-squares disparity alignment.

All L1 solvers minimize

    sum_i w_i * || a * x_i + b - y_i ||_1

over a scale ``a`` and/or a shift ``b`` (one component per axis). For fixed
``a`` the optimal shift on each axis is a weighted median of ``y - a x``, so
the profile objective ``g(a) = sum_axes min_b (...)`` is convex and piecewise
linear in ``a`` with breakpoints at pair slopes ``(y_i - y_j) / (x_i - x_j)``.

Inputs are flat arrays: ``(n, 3)`` for points, ``(n,)`` for scalar maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, DataError
from .geometry import DepthMap, PointMap

VARIANTS = ("scale_only", "scale_shift", "shift_only", "lsq_affine")

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
# Largest log-scale excursion before an optimum at a <= 0 is assumed.
_LOG_SPAN = 60.0
_CHUNK_ELEMS = 1 << 21


@dataclass(frozen=True)
class AffineAlignment:
    """Result of an alignment: ``aligned = scale * pred + shift``.

    ``shift`` is a float for scalar problems and a length-3 array for points.
    ``clamped`` is set when the unconstrained optimal scale was not positive
    and the solver fell back to the smallest positive breakpoint.
    """

    scale: float
    shift: object
    objective: float
    variant: str = "scale_shift"
    clamped: bool = False

    def apply(self, pred):
        return self.scale * np.asarray(pred, dtype=np.float64) + self.shift

    def to_dict(self) -> dict:
        shift = self.shift
        if isinstance(shift, np.ndarray):
            shift = [float(s) for s in shift]
        else:
            shift = float(shift)
        return {
            "variant": self.variant,
            "scale": float(self.scale),
            "shift": shift,
            "objective": float(self.objective),
            "clamped": bool(self.clamped),
        }


@dataclass(frozen=True)
class AlignProblem:
    pred: np.ndarray
    gt: np.ndarray
    weights: np.ndarray = field(default=None)
    variant: str = "scale_shift"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DataError(f"unknown alignment variant {self.variant!r}")

    def solve(self, **kwargs) -> AffineAlignment:
        if self.variant == "scale_only":
            return solve_scale_l1(self.pred, self.gt, self.weights)
        if self.variant == "scale_shift":
            return solve_scale_shift_l1(self.pred, self.gt, self.weights, **kwargs)
        if self.variant == "shift_only":
            return solve_shift_l1(self.pred, self.gt, self.weights)
        return solve_disparity_affine_lsq(self.pred, self.gt)


# ----------------------------------------------------------------------------
# weighted medians
# ----------------------------------------------------------------------------

def weighted_median(values, weights) -> float:
    """Lower weighted median: the smallest value whose cumulative weight reaches
    half the total. It minimizes ``sum w |v - m|`` over ``m``."""
    v = np.asarray(values, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order])
    k = np.searchsorted(cum, 0.5 * cum[-1], side="left")
    return float(v[order[min(k, v.size - 1)]])


def _row_medians(R, w):
    """Lower weighted median of every row of ``R`` (shared weights ``w``).

    Returns ``(medians, sorted_order, median_rank)``.
    """
    order = np.argsort(R, axis=1, kind="stable")
    cum = np.cumsum(w[order], axis=1)
    k = np.minimum((cum < 0.5 * cum[:, -1:]).sum(axis=1), R.shape[1] - 1)
    med = np.take_along_axis(R, np.take_along_axis(order, k[:, None], axis=1), axis=1)[:, 0]
    return med, order, k


# ----------------------------------------------------------------------------
# input handling
# ----------------------------------------------------------------------------

def _flatten_pair(pred, gt, w):
    """Normalize inputs to ``X, Y`` of shape (n, d), weights (n,), scalar flag.

    Maps (:class:`PointMap` / :class:`DepthMap`) are restricted to their joint
    mask; grid-shaped weights are restricted the same way. Zero-weight entries
    are dropped since they cannot influence the optimum.
    """
    if isinstance(pred, (PointMap, DepthMap)) or isinstance(gt, (PointMap, DepthMap)):
        if not (isinstance(pred, (PointMap, DepthMap)) and isinstance(gt, (PointMap, DepthMap))):
            raise DataError("pred and gt must both be maps or both be arrays")
        if pred.shape != gt.shape:
            raise DataError(f"grid mismatch {pred.shape} vs {gt.shape}")
        m = pred.mask & gt.mask
        P = pred.points if isinstance(pred, PointMap) else pred.values
        G = gt.points if isinstance(gt, PointMap) else gt.values
        pred, gt = P[m], G[m]
        if w is not None:
            w = np.asarray(w, dtype=np.float64)
            if w.shape == m.shape:
                w = w[m]
    X = np.asarray(pred, dtype=np.float64)
    Y = np.asarray(gt, dtype=np.float64)
    if X.shape != Y.shape:
        raise DataError(f"pred shape {X.shape} does not match gt shape {Y.shape}")
    scalar = X.ndim == 1
    if scalar:
        X, Y = X[:, None], Y[:, None]
    elif X.ndim != 2:
        raise DataError(f"expected (n,) or (n, d) arrays, got {X.shape}")
    n = X.shape[0]
    if n < 1:
        raise DataError("alignment needs at least one entry")
    if w is None:
        w = np.ones(n)
    else:
        w = np.asarray(w, dtype=np.float64).ravel()
        if w.shape != (n,):
            raise DataError(f"weights shape {w.shape} does not match {n} entries")
    if not (np.all(np.isfinite(w)) and np.all(w >= 0)):
        raise DataError("weights must be finite and nonnegative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise DataError("alignment inputs must be finite")
    keep = w > 0
    if not keep.any():
        raise DataError("weights have no positive entry")
    return X[keep], Y[keep], w[keep], scalar


def _pack_shift(b, scalar):
    b = np.asarray(b, dtype=np.float64)
    return float(b[0]) if scalar else b


def l1_objective(X, Y, w, scale, shift) -> float:
    """``sum_i w_i ||scale * x_i + shift - y_i||_1`` with inputs as in the solvers."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim == 1:
        X, Y = X[:, None], Y[:, None]
    w = np.ones(X.shape[0]) if w is None else np.asarray(w, dtype=np.float64)
    r = np.abs(scale * X + np.asarray(shift, dtype=np.float64) - Y)
    return float(np.sum(w[:, None] * r))


# ----------------------------------------------------------------------------
# scale only
# ----------------------------------------------------------------------------

def solve_scale_l1(pred, gt, w=None) -> AffineAlignment:
    """Exact minimizer of ``sum w |a x - y|`` over all coordinates.

    The objective equals ``sum w|x| * |a - y/x|`` plus a constant, so the
    optimum is the weighted median of the breakpoints ``y/x`` with weights
    ``w|x|``. A non-positive optimum is clamped to the smallest positive
    breakpoint and reported via ``clamped``.
    """
    X, Y, w, scalar = _flatten_pair(pred, gt, w)
    x = X.ravel()
    y = Y.ravel()
    ww = np.repeat(w, X.shape[1])
    nz = x != 0
    if not nz.any():
        raise AlignmentError("scale alignment has no breakpoint: all pred coordinates are zero")
    bp = y[nz] / x[nz]
    a = weighted_median(bp, ww[nz] * np.abs(x[nz]))
    clamped = False
    if not a > 0:
        pos = bp[bp > 0]
        if pos.size == 0:
            raise AlignmentError("scale alignment has no positive breakpoint")
        a = float(pos.min())
        clamped = True
    shift = 0.0 if scalar else np.zeros(X.shape[1])
    obj = float(np.sum(ww * np.abs(a * x - y)))
    return AffineAlignment(a, shift, obj, "scale_only", clamped)


def solve_depth_scale_l1(pred, gt, w=None) -> AffineAlignment:
    """Scale-only L1 alignment of scalar maps; see :func:`solve_scale_l1`."""
    return solve_scale_l1(*_as_scalar(pred, gt), w=_grid_w(pred, gt, w))


# ----------------------------------------------------------------------------
# shift only
# ----------------------------------------------------------------------------

def solve_shift_l1(pred, gt, w=None) -> AffineAlignment:
    """Translation-only alignment: per axis, the weighted median of ``y - x``."""
    X, Y, w, scalar = _flatten_pair(pred, gt, w)
    D = Y - X
    b = np.array([weighted_median(D[:, c], w) for c in range(D.shape[1])])
    obj = float(np.sum(w[:, None] * np.abs(D - b)))
    return AffineAlignment(1.0, _pack_shift(b, scalar), obj, "shift_only")


# ----------------------------------------------------------------------------
# scale and shift
# ----------------------------------------------------------------------------

class _Profile:
    """Profile objective ``g(a)`` with the shift minimized out per axis."""

    def __init__(self, X, Y, w):
        self.X, self.Y, self.w = X, Y, w
        self.evals = 0

    def batch(self, A):
        """``g`` and optimal shifts at every scale in ``A``."""
        A = np.atleast_1d(np.asarray(A, dtype=np.float64))
        n, d = self.X.shape
        G = np.zeros(A.size)
        B = np.zeros((A.size, d))
        step = max(1, _CHUNK_ELEMS // max(n, 1))
        for s in range(0, A.size, step):
            a = A[s:s + step, None]
            for c in range(d):
                R = self.Y[None, :, c] - a * self.X[None, :, c]
                med, _, _ = _row_medians(R, self.w)
                B[s:s + step, c] = med
                G[s:s + step] += np.abs(R - med[:, None]) @ self.w
        self.evals += A.size
        return G, B

    def __call__(self, a) -> float:
        return float(self.batch([a])[0][0])

    def local_breakpoints(self, a, window=4):
        """Slopes at which an entry near the weighted median at scale ``a``
        crosses any other entry; the median switches only at these scales."""
        out = []
        for c in range(self.X.shape[1]):
            xc, yc = self.X[:, c], self.Y[:, c]
            R = (yc - a * xc)[None, :]
            _, order, k = _row_medians(R, self.w)
            k = int(k[0])
            idx = order[0, max(0, k - window):k + window + 1]
            dx = xc[idx, None] - xc[None, :]
            dy = yc[idx, None] - yc[None, :]
            ok = dx != 0
            out.append(dy[ok] / dx[ok])
        s = np.concatenate(out) if out else np.empty(0)
        return s[np.isfinite(s) & (s > 0)]


def _initial_scale(X, Y, w) -> float:
    num = den = 0.0
    for c in range(X.shape[1]):
        mx = weighted_median(X[:, c], w)
        my = weighted_median(Y[:, c], w)
        den += float(np.sum(w * np.abs(X[:, c] - mx)))
        num += float(np.sum(w * np.abs(Y[:, c] - my)))
    if den > 0 and num > 0:
        return num / den
    return 1.0


def _bracket(g, t0, g0, step=math.log(2.0)):
    """Expand around log-scale ``t0`` until the minimum is bracketed.

    Returns ``(lo, hi)`` in log-scale, or ``None`` when ``g`` keeps decreasing
    toward ``a -> 0`` (optimum at a non-positive scale).
    """
    gu = g(math.exp(t0 + step))
    gd = g(math.exp(t0 - step))
    if gu >= g0 and gd >= g0:
        return t0 - step, t0 + step
    direction = 1.0 if gu < gd else -1.0
    prev_t, cur_t, cur_g = t0, t0 + direction * step, min(gu, gd)
    while True:
        step *= 2.0
        nxt_t = cur_t + direction * step
        if abs(nxt_t - t0) > _LOG_SPAN:
            if direction < 0:
                return None
            raise AlignmentError("scale alignment objective is unbounded above")
        nxt_g = g(math.exp(nxt_t))
        if nxt_g >= cur_g:
            return (min(prev_t, nxt_t), max(prev_t, nxt_t))
        prev_t, cur_t, cur_g = cur_t, nxt_t, nxt_g


def _golden(g, lo, hi, tol):
    """Golden-section search for the minimum of a unimodal ``g(exp(t))``."""
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    gc, gd = g(math.exp(c)), g(math.exp(d))
    while hi - lo > tol:
        if gc <= gd:
            hi, d, gd = d, c, gc
            c = hi - _GOLDEN * (hi - lo)
            gc = g(math.exp(c))
        else:
            lo, c, gc = c, d, gd
            d = lo + _GOLDEN * (hi - lo)
            gd = g(math.exp(d))
    return lo, hi


def _sampled_bracket(prof, X, Y, n_pairs, seed):
    """Bracket the optimum between sampled pair slopes neighboring the best one."""
    n, d = X.shape
    rng = np.random.default_rng(seed)
    i = rng.integers(n, size=n_pairs)
    j = rng.integers(n, size=n_pairs)
    c = rng.integers(d, size=n_pairs)
    dx = X[i, c] - X[j, c]
    ok = dx != 0
    s = (Y[i, c] - Y[j, c])[ok] / dx[ok]
    s = np.unique(s[np.isfinite(s) & (s > 0)])
    if s.size == 0:
        return None
    G, _ = prof.batch(s)
    k = int(np.argmin(G))
    if 0 < k < s.size - 1:
        return math.log(s[k - 1]), math.log(s[k + 1])
    t0 = math.log(s[k])
    return _bracket(prof, t0, float(G[k]))


def solve_scale_shift_l1(pred, gt, w=None, *, method="exact", n_pairs=4096, seed=0,
                         rel_tol=1e-9) -> AffineAlignment:
    """Joint scale and per-axis shift minimizing weighted L1 residuals.

    ``method="exact"`` brackets the optimum by doubling steps in log-scale from
    a robust spread-ratio starting point; ``method="sampled"`` brackets it
    between randomly sampled pair slopes (``n_pairs`` pairs, seeded). Both
    then narrow the bracket by golden-section search to ``rel_tol`` and snap
    to the exact breakpoint of the piecewise-linear profile.

    Axes on which every pred value is equal contribute a constant and are
    allowed; if all axes are constant the scale is undefined.
    """
    X, Y, w, scalar = _flatten_pair(pred, gt, w)
    varying = np.array([np.ptp(X[:, c]) > 0 for c in range(X.shape[1])])
    if not varying.any():
        raise AlignmentError("scale is undefined: pred values are identical on every axis")
    prof = _Profile(X, Y, w)
    if method == "exact":
        a0 = _initial_scale(X, Y, w)
        br = _bracket(prof, math.log(a0), prof(a0))
    elif method == "sampled":
        br = _sampled_bracket(prof, X, Y, n_pairs, seed)
        if br is None:
            a0 = _initial_scale(X, Y, w)
            br = _bracket(prof, math.log(a0), prof(a0))
    else:
        raise DataError(f"unknown method {method!r}")

    clamped = False
    if br is None:
        cand = _positive_slopes(X, Y)
        if cand.size == 0:
            raise AlignmentError("scale alignment has no positive breakpoint")
        a = float(cand.min())
        clamped = True
    else:
        lo, hi = _golden(prof, br[0], br[1], rel_tol)
        a_mid = math.exp(0.5 * (lo + hi))
        cand = prof.local_breakpoints(a_mid)
        pad = 1e-6 * (hi - lo) + 1e-12
        cand = cand[(cand >= math.exp(lo - pad)) & (cand <= math.exp(hi + pad))]
        cand = np.unique(np.concatenate([[a_mid], cand]))
        G, _ = prof.batch(cand)
        a = float(cand[int(np.argmin(G))])
    G, B = prof.batch([a])
    return AffineAlignment(a, _pack_shift(B[0], scalar), float(G[0]), "scale_shift", clamped)


def _positive_slopes(X, Y, limit=2_000_000):
    out = []
    n = X.shape[0]
    for c in range(X.shape[1]):
        if n * n > limit:
            idx = np.argsort(X[:, c])
            xi, yi = X[idx, c], Y[idx, c]
            dx = np.diff(xi)
            ok = dx != 0
            out.append(np.diff(yi)[ok] / dx[ok])
        else:
            dx = X[:, None, c] - X[None, :, c]
            dy = Y[:, None, c] - Y[None, :, c]
            ok = dx != 0
            out.append(dy[ok] / dx[ok])
    s = np.concatenate(out)
    return s[np.isfinite(s) & (s > 0)]


def solve_depth_scale_shift_l1(pred, gt, w=None, **kwargs) -> AffineAlignment:
    """Scale-and-shift L1 alignment of scalar maps."""
    return solve_scale_shift_l1(*_as_scalar(pred, gt), w=_grid_w(pred, gt, w), **kwargs)


def _as_scalar(pred, gt):
    if isinstance(pred, DepthMap) and isinstance(gt, DepthMap):
        if pred.shape != gt.shape:
            raise DataError(f"grid mismatch {pred.shape} vs {gt.shape}")
        m = pred.mask & gt.mask
        return pred.values[m], gt.values[m]
    X = np.asarray(pred, dtype=np.float64)
    Y = np.asarray(gt, dtype=np.float64)
    return X.ravel(), Y.ravel()


def _grid_w(pred, gt, w):
    if w is None:
        return None
    w = np.asarray(w, dtype=np.float64)
    if isinstance(pred, DepthMap) and isinstance(gt, DepthMap) and w.shape == pred.shape:
        return w[pred.mask & gt.mask]
    return w.ravel()


# ----------------------------------------------------------------------------
# disparity least squares
# ----------------------------------------------------------------------------

def solve_disparity_affine_lsq(pred, gt, mask=None) -> AffineAlignment:
    """Unweighted least-squares ``(a, b)`` minimizing ``sum (a d_pred + b - d_gt)^2``.

    Solved in closed form on mean-centered data.
    """
    if isinstance(pred, DepthMap) and isinstance(gt, DepthMap):
        m = pred.mask & gt.mask
        if mask is not None:
            m = m & np.asarray(mask, bool)
        x, y = pred.values[m], gt.values[m]
    else:
        x = np.asarray(pred, dtype=np.float64)
        y = np.asarray(gt, dtype=np.float64)
        if mask is not None:
            m = np.asarray(mask, bool)
            x, y = x[m], y[m]
        x, y = x.ravel(), y.ravel()
    if x.size < 2:
        raise AlignmentError("least-squares alignment needs at least two pixels")
    xc = x - x.mean()
    yc = y - y.mean()
    var = float(xc @ xc)
    if not var > 0:
        raise AlignmentError("degenerate least-squares fit: pred disparity has zero variance")
    a = float(xc @ yc) / var
    b = float(y.mean() - a * x.mean())
    obj = float(np.sum((a * x + b - y) ** 2))
    return AffineAlignment(a, b, obj, "lsq_affine")


def apply_disparity_alignment(pred, align: AffineAlignment, z_max: float) -> DepthMap:
    """Aligned depth ``1 / max(a d + b, 1/z_max)``; never exceeds ``z_max``."""
    if not z_max > 0:
        raise DataError("z_max must be positive")
    if isinstance(pred, DepthMap):
        d, m = pred.values, pred.mask
    else:
        d = np.asarray(pred, dtype=np.float64)
        m = np.isfinite(d)
    aligned = align.scale * np.where(m, d, 0.0) + align.shift
    z = 1.0 / np.maximum(aligned, 1.0 / z_max)
    return DepthMap(z, m)
