"""Deterministic analytic scenes and real-capture artifact injection.

Rays go through pixel centers of a centered pinhole camera with direction
``((u + 0.5 - cx) / f, (v + 0.5 - cy) / f, 1)``, so the ray parameter of a
hit equals its depth. All randomness comes from ``numpy.random.PCG64``
seeded explicitly (``numpy.random.default_rng(seed)``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError
from .geometry import CameraModel, DepthMap, PointMap, depth_to_points, pixel_grid

ARTIFACT_KINDS = ("boundary_shift", "hole", "ghost_surface", "noise")


@dataclass(frozen=True)
class SceneSpec:
    """Scene description.

    ``primitives`` is a list of dicts:

    * ``{"type": "plane", "point": [x, y, z], "normal": [nx, ny, nz]}``
    * ``{"type": "sphere", "center": [x, y, z], "radius": r}``
    * ``{"type": "box", "min": [x, y, z], "max": [x, y, z]}`` (axis-aligned)

    A fronto-parallel background plane at ``background_depth`` closes the scene.
    """

    width: int = 64
    height: int = 48
    focal: float = 60.0
    primitives: tuple = ()
    background_depth: float = 10.0
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["primitives"] = [dict(p) for p in self.primitives]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["primitives"] = tuple(d.get("primitives", ()))
        return cls(**d)

    def camera(self) -> CameraModel:
        return CameraModel.centered(self.focal, self.width, self.height)


@dataclass(frozen=True)
class ArtifactSpec:
    """One injected failure pattern.

    ``boundary_shift``: ``shift`` (pixels, along rows), ``edge_ratio`` (minimum
    relative depth jump that counts as a contour crossing).
    ``hole``: ``center`` (row, col), ``pixels`` (count to invalidate).
    ``ghost_surface``: ``box`` (r0, c0, r1, c1), ``ghost_depth``, ``alpha``.
    ``noise``: ``sigma`` (relative), ``fraction`` of pixels, ``seed``.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise DataError(f"unknown artifact kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "ArtifactSpec":
        return cls(d["kind"], dict(d.get("params", {})))


def _rays(spec: SceneSpec):
    cam = spec.camera()
    u, v = pixel_grid(spec.height, spec.width)
    return np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)


def _hit_plane(D, prim):
    p0 = np.asarray(prim["point"], float)
    n = np.asarray(prim["normal"], float)
    nd = D @ n
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(nd != 0, float(n @ p0) / nd, np.inf)
    return np.where(t > 0, t, np.inf)


def _hit_sphere(D, prim):
    c = np.asarray(prim["center"], float)
    r = float(prim["radius"])
    if c[2] - r <= 0:
        raise DataError("sphere extends behind the camera")
    a = np.sum(D * D, axis=-1)
    b = -2.0 * (D @ c)
    cc = float(c @ c) - r * r
    disc = b * b - 4 * a * cc
    with np.errstate(invalid="ignore"):
        t = (-b - np.sqrt(disc)) / (2 * a)
    return np.where((disc >= 0) & (t > 0), t, np.inf)


def _hit_box(D, prim):
    lo = np.asarray(prim["min"], float)
    hi = np.asarray(prim["max"], float)
    if lo[2] <= 0:
        raise DataError("box extends behind the camera")
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / D
        t2 = hi / D
    tn = np.max(np.fmin(t1, t2), axis=-1)
    tf = np.min(np.fmax(t1, t2), axis=-1)
    return np.where((tn <= tf) & (tn > 0), tn, np.inf)


_HIT = {"plane": _hit_plane, "sphere": _hit_sphere, "box": _hit_box}


def render(spec: SceneSpec):
    """Ray-cast the scene. Returns ``(depth, points, mask, camera)``."""
    if not spec.background_depth > 0:
        raise DataError("background depth must be positive")
    D = _rays(spec)
    depth = np.full((spec.height, spec.width), float(spec.background_depth))
    for prim in spec.primitives:
        kind = prim.get("type")
        if kind not in _HIT:
            raise DataError(f"unknown primitive type {kind!r}")
        depth = np.minimum(depth, _HIT[kind](D, prim))
    mask = np.isfinite(depth) & (depth > 0)
    cam = spec.camera()
    dm = DepthMap(depth, mask)
    return dm, depth_to_points(dm, cam), mask, cam


def random_scene(seed: int, width=64, height=48, focal=60.0, n_objects=3) -> SceneSpec:
    """A background wall, a slanted floor and ``n_objects`` random boxes/spheres in front."""
    rng = np.random.default_rng(seed)
    bg = float(rng.uniform(8.0, 12.0))
    prims = [{"type": "plane", "point": [0.0, 1.5, 0.0], "normal": [0.0, 1.0, -0.05]}]
    half_w = 0.5 * width / focal
    half_h = 0.5 * height / focal
    for _ in range(n_objects):
        z = float(rng.uniform(2.5, 5.0))
        x = float(rng.uniform(-0.6, 0.6) * half_w * z)
        y = float(rng.uniform(-0.5, 0.3) * half_h * z)
        size = float(rng.uniform(0.12, 0.25) * z * half_w)
        if rng.random() < 0.5:
            prims.append({"type": "sphere", "center": [x, y, z + size], "radius": size})
        else:
            prims.append({"type": "box", "min": [x - size, y - size, z],
                          "max": [x + size, y + size, z + 1.5 * size]})
    return SceneSpec(width, height, focal, tuple(prims), bg, seed)


def street_scene(seed: int, width=64, height=48, focal=60.0, n_objects=3) -> SceneSpec:
    """Well-separated foreground boxes and spheres in front of a wall and floor,
    mimicking vehicles against background in a driving capture. Objects occupy
    disjoint column bands so every occluding contour is object-vs-background."""
    rng = np.random.default_rng(seed)
    bg = float(rng.uniform(9.0, 12.0))
    prims = [{"type": "plane", "point": [0.0, 1.6, 0.0], "normal": [0.0, 1.0, -0.08]}]
    half_w = 0.5 * width / focal
    bands = np.linspace(-0.85, 0.85, n_objects + 1)
    for k in range(n_objects):
        z = float(rng.uniform(3.0, 5.0))
        lo, hi = bands[k] * half_w * z, bands[k + 1] * half_w * z
        size = float(rng.uniform(0.3, 0.42) * (hi - lo))
        x = float(rng.uniform(lo + size, hi - size))
        y = float(rng.uniform(-0.3, 0.3))
        if rng.random() < 0.5:
            prims.append({"type": "sphere", "center": [x, y, z + size], "radius": size})
        else:
            prims.append({"type": "box", "min": [x - size, y - size, z],
                          "max": [x + size, y + size, z + size]})
    return SceneSpec(width, height, focal, tuple(prims), bg, seed)


def inject(depth: DepthMap, mask, art: ArtifactSpec):
    """Corrupt a clean depth map. Returns ``(depth, mask, footprint)``.

    Pixels outside ``footprint`` keep their value and validity bit-for-bit.
    """
    z = np.array(depth.values, dtype=np.float64, copy=True)
    m = np.array(np.asarray(mask, bool) & depth.mask, copy=True)
    fp = np.zeros(z.shape, bool)
    p = art.params
    H, W = z.shape
    if art.kind == "boundary_shift":
        k = int(p.get("shift", 0))
        tau = float(p.get("edge_ratio", 0.25))
        if k != 0:
            src_z = np.roll(z, k, axis=1)
            src_m = np.roll(m, k, axis=1)
            if k > 0:
                src_m[:, :k] = False
            else:
                src_m[:, k:] = False
            with np.errstate(divide="ignore", invalid="ignore"):
                jump = np.abs(np.log(src_z) - np.log(z)) > np.log1p(tau)
            fp = m & src_m & jump
            z[fp] = src_z[fp]
    elif art.kind == "hole":
        n = int(p.get("pixels", 0))
        if n > 0:
            r0, c0 = p.get("center", (H // 2, W // 2))
            rr, cc = np.mgrid[0:H, 0:W]
            d2 = (rr - r0) ** 2 + (cc - c0) ** 2
            cand = np.flatnonzero(m.ravel())
            order = np.lexsort((cand, d2.ravel()[cand]))
            pick = cand[order[:n]]
            if pick.size < n:
                raise DataError("hole is larger than the valid area")
            fp.ravel()[pick] = True
            m[fp] = False
    elif art.kind == "ghost_surface":
        alpha = float(p.get("alpha", 0.0))
        if alpha != 0.0:
            r0, c0, r1, c1 = p["box"]
            g = float(p["ghost_depth"])
            region = np.zeros(z.shape, bool)
            region[r0:r1, c0:c1] = True
            new = (1 - alpha) * z + alpha * g
            fp = region & m & (new != z)
            z[fp] = new[fp]
    elif art.kind == "noise":
        sigma = float(p.get("sigma", 0.0))
        frac = float(p.get("fraction", 1.0))
        if sigma != 0.0 and frac > 0:
            rng = np.random.default_rng(int(p.get("seed", 0)))
            pick = rng.random(z.shape) < frac
            eps = rng.normal(0.0, sigma, z.shape)
            new = z * np.exp(eps)
            fp = pick & m & (new != z)
            z[fp] = new[fp]
    return DepthMap(z, m), m, fp


def biased_prediction(gt: PointMap, scale=2.0, bias=0.0) -> PointMap:
    """A stand-in for a synthetic-trained predictor: ``gt`` scaled globally by
    ``scale`` and by a smooth horizontal depth drift ``exp(bias * x_n)``, where
    ``x_n`` runs from -1 (left edge) to 1 (right edge). Exact local structure,
    inexact absolute depth."""
    W = gt.width
    xn = (np.arange(W) + 0.5) / W * 2.0 - 1.0
    factor = scale * np.exp(bias * xn)[None, :, None]
    return PointMap(gt.points * factor, gt.mask, "affine")
