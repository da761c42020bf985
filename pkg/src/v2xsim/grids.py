"""BEV grid algebra.

Cells are addressed as ``(x, y)`` = (column, row); arrays are stored
row-major as ``values[y, x, c]``. Grids are immutable: constructors copy
their input and mark it read-only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels

DEFAULT_RESOLUTION = 0.25  # m/cell; 192 x 576 cells span 48 m x 144 m

_HEADER = struct.Struct("<IIId")


class ShapeError(ValueError):
    """Raised when grids that must share spatial dimensions do not."""


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    values: np.ndarray
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ShapeError(f"grid values must be (H, W, C) with every dim >= 1, got {v.shape}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        v = _frozen(v, np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "resolution", float(self.resolution))

    @classmethod
    def zeros(cls, height, width, channels=1, resolution=DEFAULT_RESOLUTION):
        return cls(np.zeros((height, width, channels)), resolution)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape

    def plane(self, c=0):
        """Channel ``c`` as a 2-D (H, W) view."""
        return self.values[:, :, c]

    def with_values(self, values):
        return Grid(values, self.resolution)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.values, other.values)

    __hash__ = None

    # -- serialisation --------------------------------------------------

    def to_bytes(self):
        """Header (H, W, C as uint32, resolution as float64) + float32 values, little-endian."""
        head = _HEADER.pack(self.height, self.width, self.channels, self.resolution)
        return head + self.values.astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, buf):
        grid, _ = cls._read(buf, 0)
        return grid

    @classmethod
    def _read(cls, buf, offset):
        h, w, c, res = _HEADER.unpack_from(buf, offset)
        offset += _HEADER.size
        n = h * w * c
        vals = np.frombuffer(buf, dtype="<f4", count=n, offset=offset).reshape(h, w, c)
        return cls(vals.astype(np.float64), res), offset + 4 * n

    def to_json(self):
        return json.dumps({
            "height": self.height,
            "width": self.width,
            "channels": self.channels,
            "resolution": self.resolution,
            "values": self.values.ravel().tolist(),
        })

    @classmethod
    def from_json(cls, text):
        d = json.loads(text) if isinstance(text, (str, bytes)) else text
        vals = np.asarray(d["values"], dtype=np.float64)
        return cls(vals.reshape(d["height"], d["width"], d["channels"]), d["resolution"])


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-cell displacement in cells; ``values[y, x] = (dx, dy)``."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ShapeError(f"flow must be (H, W, 2), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("flow displacements must be finite")
        object.__setattr__(self, "values", _frozen(v, np.float64))

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width, 2)))

    @classmethod
    def uniform(cls, height, width, dx, dy):
        v = np.empty((height, width, 2))
        v[..., 0] = dx
        v[..., 1] = dy
        return cls(v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def dx(self):
        return self.values[..., 0]

    @property
    def dy(self):
        return self.values[..., 1]

    def is_zero(self):
        return not np.any(self.values)

    def __eq__(self, other):
        if not isinstance(other, FlowField):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Mask:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 3 and v.shape[2] == 1:
            v = v[:, :, 0]
        if v.ndim != 2:
            raise ShapeError(f"mask must be (H, W), got {v.shape}")
        if v.dtype != np.bool_:
            if not np.all((v == 0) | (v == 1)):
                raise ValueError("mask values must be 0 or 1")
        object.__setattr__(self, "values", _frozen(v, np.bool_))

    @classmethod
    def full(cls, height, width):
        return cls(np.ones((height, width), dtype=bool))

    @classmethod
    def empty(cls, height, width):
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def cardinality(self):
        return int(self.values.sum())

    def __eq__(self, other):
        if not isinstance(other, Mask):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    def to_bits(self):
        return np.packbits(self.values.ravel()).tobytes()

    @classmethod
    def from_bits(cls, buf, height, width):
        bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), count=height * width)
        return cls(bits.reshape(height, width).astype(bool))


def _check_spatial(a, b):
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeError(f"spatial dims differ: {(a.height, a.width)} vs {(b.height, b.width)}")


def gaussian_filter(g: Grid, sigma_cells: float) -> Grid:
    """Separable Gaussian blur of every channel; ``sigma_cells == 0`` is the identity."""
    if sigma_cells < 0:
        raise ValueError(f"sigma_cells must be >= 0, got {sigma_cells}")
    if sigma_cells == 0:
        return g
    k = kernels.gaussian_kernel1d(sigma_cells)
    out = np.empty_like(g.values)
    for c in range(g.channels):
        out[:, :, c] = kernels.separable_filter(g.values[:, :, c], k)
    # rounding can push a flat field a few ulps outside its own range
    out = np.clip(out, g.values.min(), g.values.max())
    return g.with_values(out)


def channel_max(g: Grid) -> Grid:
    return g.with_values(g.values.max(axis=2, keepdims=True))


def apply_mask(g: Grid, m: Mask) -> Grid:
    _check_spatial(g, m)
    return g.with_values(g.values * m.values[:, :, None])


def round_flow(flow: FlowField):
    """Nearest-integer (dx, dy), halves away from zero."""
    v = flow.values
    r = np.sign(v) * np.floor(np.abs(v) + 0.5)
    return r[..., 0].astype(np.int64), r[..., 1].astype(np.int64)


def affine_warp(f: Grid, flow: FlowField, bilinear: bool = False) -> Grid:
    """``out(x, y) = f(x + dx(x, y), y + dy(x, y))``; sources outside the grid read zero.

    Displacements are rounded to the nearest cell unless ``bilinear`` is set.
    """
    _check_spatial(f, flow)
    if bilinear:
        out = kernels.warp_bilinear(f.values, flow.dx, flow.dy)
    else:
        dx, dy = round_flow(flow)
        out = kernels.warp_gather(f.values, dx, dy)
    return f.with_values(out)
