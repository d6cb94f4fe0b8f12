"""Dense 2-D float grids, binary masks, resampling, warping, and file IO.

A Grid is the universal carrier in this package: latents, attention maps,
masks, and image channels are all grids of float64.
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "Grid",
    "BinaryMask",
    "GridError",
    "GridFormatError",
    "resample_mask",
    "bilinear_warp",
    "grid_write",
    "grid_read",
    "mask_read",
]

# .f64grid binary format
_MAGIC = b"F64G"
_HEADER = struct.Struct("<4sII")
# refuse to allocate absurd grids from corrupt headers
_MAX_CELLS = 1 << 28


class GridError(ValueError):
    """Invalid grid construction or operation."""


class GridFormatError(GridError):
    """Malformed .f64grid file."""


class Grid:
    """Immutable dense 2-D array of finite float64 values, row-major."""

    __slots__ = ("a",)

    def __init__(self, values, *, _checked: bool = False):
        a = np.asarray(values, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise GridError(f"grid must be 2-D and non-empty, got shape {a.shape}")
        if not _checked and not np.all(np.isfinite(a)):
            raise GridError("grid contains non-finite values")
        a = np.ascontiguousarray(a)
        a.flags.writeable = False
        object.__setattr__(self, "a", a)

    def __setattr__(self, name, value):
        raise AttributeError("Grid is immutable")

    @property
    def height(self) -> int:
        return self.a.shape[0]

    @property
    def width(self) -> int:
        return self.a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "Grid":
        return cls(np.zeros((height, width)), _checked=True)

    @classmethod
    def full(cls, height: int, width: int, value: float) -> "Grid":
        return cls(np.full((height, width), float(value)))

    def __eq__(self, other) -> bool:
        return isinstance(other, Grid) and self.a.shape == other.a.shape and bool(
            np.array_equal(self.a, other.a)
        )

    def __repr__(self) -> str:
        return f"Grid({self.height}x{self.width})"


class BinaryMask:
    """Grid whose values are exactly 0.0 or 1.0."""

    __slots__ = ("grid",)

    def __init__(self, grid):
        if not isinstance(grid, Grid):
            grid = Grid(grid)
        a = grid.a
        if not np.all((a == 0.0) | (a == 1.0)):
            raise GridError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "grid", grid)

    def __setattr__(self, name, value):
        raise AttributeError("BinaryMask is immutable")

    @property
    def a(self) -> np.ndarray:
        return self.grid.a

    @property
    def height(self) -> int:
        return self.grid.height

    @property
    def width(self) -> int:
        return self.grid.width

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "BinaryMask":
        return cls(Grid.zeros(height, width))

    @classmethod
    def ones(cls, height: int, width: int) -> "BinaryMask":
        return cls(Grid.full(height, width, 1.0))

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryMask) and self.grid == other.grid

    def __repr__(self) -> str:
        return f"BinaryMask({self.height}x{self.width})"


def _overlap_weights(n_src: int, n_dst: int) -> np.ndarray:
    """(n_dst, n_src) matrix of fractional interval overlaps, rows sum to 1.

    Destination cell i covers the source interval [i*r, (i+1)*r) with
    r = n_src / n_dst; entry (i, k) is the length of its overlap with
    source cell [k, k+1), normalised by r.
    """
    r = n_src / n_dst
    w = np.zeros((n_dst, n_src))
    for i in range(n_dst):
        lo = i * r
        hi = (i + 1) * r
        k0 = int(np.floor(lo))
        k1 = min(int(np.ceil(hi)), n_src)
        for k in range(k0, k1):
            w[i, k] = max(0.0, min(hi, k + 1) - max(lo, k)) / r
    return w


def resample_mask(mask: BinaryMask, target_h: int, target_w: int) -> BinaryMask:
    """Area-average the mask over each target cell, then threshold at 0.5.

    Ties (average exactly 0.5) map to 1.
    """
    if target_h < 1 or target_w < 1:
        raise GridError(f"target dims must be >= 1, got {target_h}x{target_w}")
    if (target_h, target_w) == mask.shape:
        return mask
    wr = _overlap_weights(mask.height, target_h)
    wc = _overlap_weights(mask.width, target_w)
    avg = wr @ mask.a @ wc.T
    return BinaryMask(Grid(np.where(avg >= 0.5, 1.0, 0.0), _checked=True))


def bilinear_warp(image: Grid, flow_x: Grid, flow_y: Grid) -> Grid:
    """Sample image at (i + flow_y, j + flow_x) with bilinear interpolation.

    Flow is in pixel units; source coordinates are clamped to the image
    rectangle, so zero flow is the bit-exact identity.
    """
    if flow_x.shape != image.shape or flow_y.shape != image.shape:
        raise GridError(
            f"flow shape {flow_x.shape}/{flow_y.shape} != image shape {image.shape}"
        )
    h, w = image.shape
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sy = np.clip(ii + flow_y.a, 0.0, h - 1.0)
    sx = np.clip(jj + flow_x.a, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    a = image.a
    top = a[y0, x0] * (1.0 - fx) + a[y0, x1] * fx
    bot = a[y1, x0] * (1.0 - fx) + a[y1, x1] * fx
    return Grid(top * (1.0 - fy) + bot * fy, _checked=True)


def grid_write(path, grid: Grid) -> None:
    """Write a grid to the .f64grid format (magic, u32 dims, f64 payload, LE)."""
    with open(path, "wb") as f:
        f.write(_HEADER.pack(_MAGIC, grid.height, grid.width))
        f.write(grid.a.astype("<f8").tobytes())


def grid_read(path) -> Grid:
    """Read a .f64grid file; exact inverse of grid_write on finite values."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise GridFormatError(f"{path}: malformed header (file too short)")
    magic, h, w = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if h == 0 or w == 0:
        raise GridFormatError(f"{path}: zero dimension {h}x{w}")
    if h * w > _MAX_CELLS:
        raise GridFormatError(f"{path}: dimension overflow {h}x{w}")
    expected = _HEADER.size + 8 * h * w
    if len(raw) < expected:
        raise GridFormatError(
            f"{path}: truncated payload ({len(raw)} bytes, expected {expected})"
        )
    if len(raw) > expected:
        raise GridFormatError(f"{path}: trailing data after payload")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(h, w)
    return Grid(values)


def mask_read(path) -> BinaryMask:
    """Read a .f64grid file whose payload must be exactly 0/1."""
    return BinaryMask(grid_read(path))
