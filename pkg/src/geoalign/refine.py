"""Real-capture depth refinement: local-alignment mismatch filtering followed by
log-depth Poisson completion guided by a predicted depth map."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import LinearOperator, cg

from .align import AffineAlignment, solve_scale_shift_l1
from .errors import AlignmentError, DataError, GeoAlignError, SolverError, StageError
from .geometry import CameraModel, DepthMap, PointMap, as_mask, depth_to_points
from .losses import SphereRegion, bounding_radius, sample_sphere_regions

log = logging.getLogger(__name__)

_FOUR = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], bool)


@dataclass(frozen=True)
class RefineConfig:
    radius_fractions: tuple = (0.05, 0.15, 0.5)
    centers_per_radius: int = 128
    seed: int = 0
    inverse_depth_weights: bool = False
    cg_rtol: float = 1e-10


@dataclass(frozen=True)
class OutlierReport:
    """Per-region outlier index sets (flat pixel indices) and their union."""

    outliers: tuple
    union: np.ndarray
    alignments: tuple
    region_radii: tuple = ()
    skipped: int = 0
    mode: str = "local"

    @property
    def counts(self):
        return [int(o.size) for o in self.outliers]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "regions": len(self.outliers),
            "skipped_regions": int(self.skipped),
            "outlier_pixels": int(self.union.sum()),
            "per_region_counts": self.counts,
        }


@dataclass(frozen=True)
class CompletionProblem:
    """``known`` carries the kept real depth (its mask is the filtered valid area);
    ``guide`` is the predicted depth over the full grid."""

    known: DepthMap
    guide: DepthMap

    def __post_init__(self):
        if self.known.shape != self.guide.shape:
            raise DataError(f"grid mismatch {self.known.shape} vs {self.guide.shape}")

    @property
    def unknown(self) -> np.ndarray:
        return ~self.known.mask

    @property
    def boundary(self) -> np.ndarray:
        """Known pixels 4-adjacent to an unknown pixel."""
        grown = ndimage.binary_dilation(self.unknown, structure=_FOUR)
        return grown & self.known.mask


@dataclass(frozen=True)
class CompletionResult:
    depth: DepthMap
    residual: float
    iterations: int
    free_floating: np.ndarray = field(repr=False, default=None)


def sample_pred_regions(pred: PointMap, mask, centers, radii) -> list[SphereRegion]:
    """Sphere regions measured in predicted point space."""
    return sample_sphere_regions(pred, mask, centers, radii)


def schedule_regions(pred: PointMap, mask, config: RefineConfig = RefineConfig()) -> list[SphereRegion]:
    """Seeded centers per radius fraction of the prediction's bounding-sphere radius."""
    m = as_mask(mask, pred.shape) & pred.mask
    idx = np.flatnonzero(m.ravel())
    if idx.size == 0:
        raise DataError("empty mask")
    rng = np.random.default_rng(config.seed)
    R = bounding_radius(pred, m)
    centers, radii = [], []
    for frac in config.radius_fractions:
        centers.append(rng.choice(idx, size=config.centers_per_radius, replace=True))
        radii.append(np.full(config.centers_per_radius, frac * R))
    return sample_pred_regions(pred, m, np.concatenate(centers), np.concatenate(radii))


def detect_outliers(pred: PointMap, real: PointMap, regions, *, inverse_depth_weights=False,
                    mode="local", **solver_kw) -> OutlierReport:
    """Flag real points that disagree with the prediction inside each region.

    Real points are aligned onto predicted ones (``s * p_real + t ~ p_pred``)
    and member ``i`` is an outlier of region ``j`` when
    ``||s_j p_i + t_j - p_pred_i|| > r_j``. With ``mode="global"`` a single
    alignment over all valid pixels replaces the per-region ones (same
    thresholds), which is the ablation that exposes absolute prediction bias.
    """
    if pred.shape != real.shape:
        raise DataError(f"grid mismatch {pred.shape} vs {real.shape}")
    valid = (pred.mask & real.mask).ravel()
    P = pred.points.reshape(-1, 3)
    R = real.points.reshape(-1, 3)
    zr = R[:, 2]
    w_all = np.where(valid & (zr > 0), 1.0 / np.where(zr > 0, zr, 1.0), 0.0) \
        if inverse_depth_weights else valid.astype(np.float64)

    glob = None
    if mode == "global":
        idx = np.flatnonzero(valid)
        glob = solve_scale_shift_l1(R[idx], P[idx], w_all[idx], **solver_kw)
    elif mode != "local":
        raise DataError(f"unknown mode {mode!r}")

    outs, aligns, radii = [], [], []
    skipped = 0
    union = np.zeros(valid.size, bool)
    for reg in regions:
        mem = reg.members[valid[reg.members]]
        radii.append(reg.radius)
        if mem.size < 2:
            skipped += 1
            outs.append(np.empty(0, np.int64))
            aligns.append(None)
            continue
        al = glob
        if al is None:
            try:
                al = solve_scale_shift_l1(R[mem], P[mem], w_all[mem], **solver_kw)
            except AlignmentError as e:
                log.info("region %d skipped: %s", reg.center_index, e)
                skipped += 1
                outs.append(np.empty(0, np.int64))
                aligns.append(None)
                continue
        resid = np.linalg.norm(al.scale * R[mem] + al.shift - P[mem], axis=1)
        o = mem[resid > reg.radius]
        union[o] = True
        outs.append(o)
        aligns.append(al)
    return OutlierReport(tuple(outs), union.reshape(pred.shape), tuple(aligns), tuple(radii),
                         skipped, mode)


def filter_mask(mask, report: OutlierReport) -> np.ndarray:
    """The mask with every reported outlier removed."""
    m = np.asarray(mask, bool)
    if report.union.shape != m.shape:
        raise DataError("report and mask shapes differ")
    return m & ~report.union


def _assemble(unknown, log_guide, log_known):
    """Sparse normal equations for the unknown log-depths.

    Every 4-neighbor edge with an unknown endpoint ``i`` adds
    ``(u_i - u_j) = (g_i - g_j)`` to row ``i``; known ``u_j`` moves to the RHS.
    """
    H, W = unknown.shape
    idx = -np.ones((H, W), np.int64)
    n = int(unknown.sum())
    idx[unknown] = np.arange(n)
    diag = np.zeros(n)
    rhs = np.zeros(n)
    rows, cols = [], []
    for dr, dc in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        r0, r1 = max(0, -dr), H - max(0, dr)
        c0, c1 = max(0, -dc), W - max(0, dc)
        here = (slice(r0, r1), slice(c0, c1))
        nb = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
        sel = unknown[here]
        i = idx[here][sel]
        np.add.at(diag, i, 1.0)
        np.add.at(rhs, i, (log_guide[here] - log_guide[nb])[sel])
        nb_unknown = unknown[nb][sel]
        np.add.at(rhs, i[~nb_unknown], log_known[nb][sel][~nb_unknown])
        rows.append(i[nb_unknown])
        cols.append(idx[nb][sel][nb_unknown])
    r = np.concatenate(rows + [np.arange(n)])
    c = np.concatenate(cols + [np.arange(n)])
    v = np.concatenate([-np.ones(sum(x.size for x in rows)), diag])
    A = sp.csr_matrix((v, (r, c)), shape=(n, n))
    return A, rhs, idx


def solve_completion(problem: CompletionProblem, rtol=1e-10) -> CompletionResult:
    """Log-depth Poisson completion with the kept depth as Dirichlet data.

    Unknown components with no known neighbor are underdetermined; they are
    filled with the guide itself (its gradients integrated and anchored to its
    own median log-depth) and excluded from the returned mask.
    """
    unknown = problem.unknown
    known = problem.known
    guide = problem.guide
    out = np.array(known.values, dtype=np.float64, copy=True)
    free = np.zeros(unknown.shape, bool)
    if not unknown.any():
        return CompletionResult(DepthMap(out, np.ones(out.shape, bool)), 0.0, 0, free)
    g = guide.values
    need = ndimage.binary_dilation(unknown, structure=_FOUR)
    if np.any(~(g[need] > 0)) or np.any(~guide.mask[need]):
        raise DataError("guide depth must be valid and positive on and around the unknown region")
    if np.any(~(known.values[known.mask] > 0)):
        raise DataError("known depth must be positive")
    log_g = np.log(np.where(need, g, 1.0))
    log_k = np.where(known.mask, np.log(np.where(known.mask, known.values, 1.0)), 0.0)

    labels, n_comp = ndimage.label(unknown, structure=_FOUR)
    touched = ndimage.binary_dilation(known.mask, structure=_FOUR) & unknown
    anchored = np.unique(labels[touched])
    for lab in range(1, n_comp + 1):
        if lab not in anchored:
            comp = labels == lab
            # no Dirichlet data: integrating the guide gradients and anchoring at
            # the guide's own median log-depth reproduces the guide
            out[comp] = g[comp]
            free |= comp
    solve_mask = unknown & ~free
    residual, iters = 0.0, 0
    if solve_mask.any():
        A, b, _ = _assemble(solve_mask, log_g, log_k)
        n = b.size
        inv_d = 1.0 / A.diagonal()
        M = LinearOperator((n, n), matvec=lambda x: inv_d * x, dtype=np.float64)
        x0 = log_g[solve_mask] - np.median(log_g[solve_mask]) + np.median(log_k[known.mask]) \
            if known.mask.any() else None
        count = [0]

        def _cb(_):
            count[0] += 1

        x, info = cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=10 * n, M=M, callback=_cb)
        bn = float(np.linalg.norm(b))
        residual = float(np.linalg.norm(b - A @ x)) / (bn if bn > 0 else 1.0)
        iters = count[0]
        if info != 0 or not np.isfinite(residual) or residual > rtol:
            raise SolverError(f"conjugate gradient did not converge (info={info})", residual=residual)
        out[solve_mask] = np.exp(x)
    return CompletionResult(DepthMap(out, ~free), residual, iters, free)


def poisson_complete(problem: CompletionProblem, rtol=1e-10) -> DepthMap:
    """Completed depth map; see :func:`solve_completion`."""
    return solve_completion(problem, rtol).depth


@dataclass(frozen=True)
class RefineResult:
    depth: DepthMap
    mask: np.ndarray
    report: OutlierReport
    filtered_mask: np.ndarray
    completion: CompletionResult

    def to_dict(self) -> dict:
        d = self.report.to_dict()
        d.update({
            "filtered_valid_pixels": int(self.filtered_mask.sum()),
            "output_valid_pixels": int(self.mask.sum()),
            "free_floating_pixels": int(self.completion.free_floating.sum()),
            "cg_residual": float(self.completion.residual),
            "cg_iterations": int(self.completion.iterations),
        })
        return d


def refine_pipeline(real_depth: DepthMap, real_mask, pred: PointMap, cam: CameraModel,
                    config: RefineConfig = RefineConfig(), regions=None, **solver_kw) -> RefineResult:
    """Filter mismatched real depth against a prediction, then complete the gaps.

    The completion guide is the prediction's z channel. Errors are re-raised
    as :class:`StageError` naming the failing stage.
    """
    stage = "unproject"
    try:
        real_mask = as_mask(real_mask, real_depth.shape) & real_depth.mask
        if pred.shape != real_depth.shape:
            raise DataError(f"grid mismatch {pred.shape} vs {real_depth.shape}")
        real = depth_to_points(DepthMap(real_depth.values, real_mask), cam)
        m = real.mask & pred.mask
        stage = "sample_regions"
        if regions is None:
            regions = schedule_regions(pred, m, config)
        stage = "detect_outliers"
        report = detect_outliers(pred, real, regions,
                                 inverse_depth_weights=config.inverse_depth_weights, **solver_kw)
        stage = "filter_mask"
        kept = filter_mask(real.mask, report)
        stage = "poisson_complete"
        guide = DepthMap(pred.points[..., 2], pred.mask)
        comp = solve_completion(CompletionProblem(DepthMap(real_depth.values, kept), guide),
                                rtol=config.cg_rtol)
    except GeoAlignError as e:
        raise StageError(stage, e) from e
    return RefineResult(comp.depth, comp.depth.mask, report, kept, comp)
