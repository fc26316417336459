"""Map file formats: PFM depth, binary PGM masks, raw float32 point maps with a
JSON sidecar, and deterministic JSON."""

from __future__ import annotations

import json
import math
import os
import re
import tempfile

import numpy as np

from .errors import DataError
from .geometry import DepthMap, PointMap


def atomic_write(path, data: bytes):
    """Write ``data`` to ``path`` via a temporary file and rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- JSON ---------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, bool) or x is None:
        return json.dumps(x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if not math.isfinite(x):
            return "null"
        s = format(x, ".17g")
        if not re.search(r"[.eEn]", s):
            s += ".0"
        return s
    if isinstance(x, str):
        return json.dumps(x)
    if isinstance(x, dict):
        items = sorted((str(k), v) for k, v in x.items())
        return "{" + ", ".join(f"{json.dumps(k)}: {_fmt(v)}" for k, v in items) + "}"
    if isinstance(x, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in x) + "]"
    raise TypeError(f"cannot serialize {type(x).__name__}")


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, floats with 17 significant digits."""
    return _fmt(obj) + "\n"


def write_json(path, obj):
    atomic_write(path, dumps(obj).encode())


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: {e}") from e


# -- PFM ----------------------------------------------------------------------

def read_pfm(path) -> np.ndarray:
    """Read a PFM file into a top-left-origin float64 array (H x W or H x W x 3)."""
    try:
        with open(path, "rb") as fh:
            header = fh.readline().strip()
            if header == b"PF":
                channels = 3
            elif header == b"Pf":
                channels = 1
            else:
                raise DataError(f"{path}: not a PFM file")
            dims = fh.readline().split()
            while not dims:
                dims = fh.readline().split()
            width, height = int(dims[0]), int(dims[1])
            scale = float(fh.readline().strip())
            endian = "<" if scale < 0 else ">"
            data = np.frombuffer(fh.read(), dtype=endian + "f4")
    except OSError as e:
        raise DataError(f"{path}: {e}") from e
    n = width * height * channels
    if data.size < n:
        raise DataError(f"{path}: truncated PFM data")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data[:n].reshape(shape)).astype(np.float64)


def write_pfm(path, image):
    """Write a little-endian PFM (rows stored bottom-up per the format)."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise DataError(f"PFM supports H x W or H x W x 3, got {a.shape}")
    h, w = a.shape[:2]
    body = np.flipud(a).astype("<f4").tobytes()
    atomic_write(path, tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n" + body)


def read_depth(path, mask=None) -> DepthMap:
    """PFM depth map; NaN and infinite values become invalid."""
    z = read_pfm(path)
    if z.ndim != 2:
        raise DataError(f"{path}: expected a single-channel PFM")
    return DepthMap(z, mask)


def write_depth(path, depth: DepthMap):
    """Invalid pixels are written as NaN."""
    write_pfm(path, np.where(depth.mask, depth.values, np.nan))


# -- PGM ----------------------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Binary (P5) 8-bit PGM as a uint8 array."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise DataError(f"{path}: {e}") from e
    tokens = []
    pos = 0
    while len(tokens) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)").match(raw, pos)
        if m is None:
            raise DataError(f"{path}: malformed PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    if tokens[0] != b"P5":
        raise DataError(f"{path}: only binary PGM (P5) is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise DataError(f"{path}: 16-bit PGM not supported")
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise DataError(f"{path}: truncated PGM data")
    return data.reshape(h, w)


def read_mask(path) -> np.ndarray:
    """Mask PGM: nonzero is valid."""
    return read_pgm(path) > 0


def write_mask(path, mask):
    m = np.asarray(mask, bool)
    h, w = m.shape
    atomic_write(path, f"P5\n{w} {h}\n255\n".encode() + (m.astype(np.uint8) * 255).tobytes())


# -- point maps ---------------------------------------------------------------

def _sidecar(path):
    return os.fspath(path) + ".json"


def write_points(path, pm: PointMap):
    """Raw little-endian float32 xyz triplets (row-major, top-left origin) plus a
    ``<path>.json`` header ``{width, height, channels, frame}``. Invalid points
    are stored as NaN."""
    pts = np.where(pm.mask[..., None], pm.points, np.nan).astype("<f4")
    atomic_write(path, pts.tobytes())
    write_json(_sidecar(path), {"width": pm.width, "height": pm.height, "channels": 3,
                                "frame": pm.frame})


def read_points(path, mask=None) -> PointMap:
    head = read_json(_sidecar(path))
    try:
        w, h, c = int(head["width"]), int(head["height"]), int(head.get("channels", 3))
    except (KeyError, ValueError) as e:
        raise DataError(f"{_sidecar(path)}: bad header ({e})") from e
    if c != 3:
        raise DataError(f"{path}: point maps need 3 channels, header says {c}")
    try:
        data = np.fromfile(path, dtype="<f4")
    except OSError as e:
        raise DataError(f"{path}: {e}") from e
    if data.size != w * h * 3:
        raise DataError(f"{path}: expected {w * h * 3} floats, found {data.size}")
    return PointMap(data.reshape(h, w, 3).astype(np.float64), mask, head.get("frame", "affine"))
