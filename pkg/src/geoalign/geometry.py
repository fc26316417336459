"""Grid geometry containers and pinhole conversions.

Pixel convention: pixel ``(u, v)`` (column, row) has its center at image
coordinates ``(u + 0.5, v + 0.5)``; storage is row-major with the origin at
the top-left corner. Invalid pixels are carried by an explicit boolean mask,
never by sentinel values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError

FRAMES = ("affine", "metric")


def _frozen(a, dtype=None):
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


def as_mask(mask, shape=None) -> np.ndarray:
    """Coerce ``mask`` to a read-only boolean array, checking its shape."""
    m = np.asarray(mask, dtype=bool)
    if shape is not None and m.shape != tuple(shape):
        raise GeometryError(f"mask shape {m.shape} does not match map shape {tuple(shape)}")
    return _frozen(m)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels, plus an optional z-shift in scene units."""

    fx: float
    fy: float
    cx: float
    cy: float
    z_shift: float = 0.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def centered(cls, focal: float, width: int, height: int) -> "CameraModel":
        return cls(float(focal), float(focal), width / 2.0, height / 2.0)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "z_shift": self.z_shift}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   float(d.get("z_shift", 0.0)))


@dataclass(frozen=True)
class DepthMap:
    """H x W scalar map (depth or disparity) with a validity mask.

    NaN or infinite values are always treated as invalid, whatever the mask says.
    """

    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise GeometryError(f"depth map must be 2-D, got shape {v.shape}")
        m = np.ones(v.shape, bool) if self.mask is None else np.asarray(self.mask, bool)
        if m.shape != v.shape:
            raise GeometryError(f"mask shape {m.shape} does not match map shape {v.shape}")
        m = m & np.isfinite(v)
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def shape(self):
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


DisparityMap = DepthMap


@dataclass(frozen=True)
class PointMap:
    """H x W x 3 camera-space points with validity mask and frame tag."""

    points: np.ndarray
    mask: np.ndarray = field(default=None)
    frame: str = "affine"

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 3 or p.shape[2] != 3:
            raise GeometryError(f"point map must be H x W x 3, got shape {p.shape}")
        if self.frame not in FRAMES:
            raise GeometryError(f"unknown frame {self.frame!r}")
        m = np.ones(p.shape[:2], bool) if self.mask is None else np.asarray(self.mask, bool)
        if m.shape != p.shape[:2]:
            raise GeometryError(f"mask shape {m.shape} does not match map shape {p.shape[:2]}")
        m = m & np.isfinite(p).all(axis=2)
        object.__setattr__(self, "points", _frozen(p))
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def shape(self):
        return self.points.shape[:2]

    @property
    def height(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]

    def with_mask(self, mask) -> "PointMap":
        return PointMap(self.points, as_mask(mask, self.shape) & self.mask, self.frame)


def pixel_grid(height: int, width: int):
    """Image coordinates of pixel centers, as two H x W arrays ``(u, v)``."""
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    return u + 0.5, v + 0.5


def depth_to_points(depth: DepthMap, cam: CameraModel) -> PointMap:
    """Unproject a depth map through a pinhole camera.

    ``cam.z_shift`` is ignored here; it only matters for recovered cameras.
    Pixels with invalid or non-positive depth become invalid points.
    """
    u, v = pixel_grid(depth.height, depth.width)
    z = depth.values
    valid = depth.mask & (z > 0)
    zz = np.where(valid, z, 0.0)
    pts = np.stack([(u - cam.cx) / cam.fx * zz, (v - cam.cy) / cam.fy * zz, zz], axis=-1)
    return PointMap(pts, valid, "affine")


def points_to_depth(pm: PointMap) -> DepthMap:
    """The z channel of a point map, with validity carried over."""
    return DepthMap(pm.points[..., 2], pm.mask)


def inverse_depth_weights(gt_depth, mask=None) -> np.ndarray:
    """Per-pixel weights ``1/z`` on the mask and 0 elsewhere.

    ``gt_depth`` may be a :class:`DepthMap` or a plain array of depths.
    """
    if isinstance(gt_depth, DepthMap):
        z = gt_depth.values
        m = gt_depth.mask if mask is None else as_mask(mask, z.shape) & gt_depth.mask
    else:
        z = np.asarray(gt_depth, dtype=np.float64)
        m = np.ones(z.shape, bool) if mask is None else as_mask(mask, z.shape)
    zm = z[m]
    if np.any(~(zm > 0)):
        raise GeometryError("inverse-depth weights need strictly positive depth on the mask")
    w = np.zeros(z.shape)
    w[m] = 1.0 / zm
    return w
