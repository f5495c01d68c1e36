"""Signals, their geometries, and shift-offset patterns.

A signal is a flat vector of N real samples plus a geometry that says how
cyclic shifts act on it: ``Line(n)`` shifts the whole vector, ``Grid(h, w)``
shifts each axis of the row-major H x W image independently.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidOffset


@dataclass(frozen=True)
class Line:
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Line length must be >= 1, got {self.n}")

    @property
    def size(self):
        return self.n


@dataclass(frozen=True)
class Grid:
    h: int
    w: int

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise ValueError(f"Grid axes must be >= 1, got {self.h}x{self.w}")

    @property
    def size(self):
        return self.h * self.w


class Signal:
    """Immutable length-N sample vector with its shift geometry.

    ``values`` is always stored as a flat float64 vector; for Grid geometry
    it is the row-major flattening of the image.
    """

    __slots__ = ("values", "geometry")

    def __init__(self, values, geometry):
        values = np.asarray(values, dtype=np.float64).ravel()
        if values.size < 1:
            raise ValueError("signal must have at least one sample")
        if not np.all(np.isfinite(values)):
            raise ValueError("signal values must be finite")
        if values.size != geometry.size:
            raise ValueError(
                f"geometry covers {geometry.size} samples, got {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "geometry", geometry)

    def __setattr__(self, name, value):
        raise AttributeError("Signal is immutable")

    @classmethod
    def line(cls, values):
        values = np.asarray(values, dtype=np.float64).ravel()
        return cls(values, Line(values.size))

    @classmethod
    def grid(cls, image):
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 2:
            raise ValueError(f"grid signal needs a 2-D array, got ndim={image.ndim}")
        return cls(image.ravel(), Grid(image.shape[0], image.shape[1]))

    @property
    def n(self):
        return self.values.size

    def as_grid(self):
        """Row-major 2-D view (Grid geometry only)."""
        if not isinstance(self.geometry, Grid):
            raise ValueError("signal does not have Grid geometry")
        return self.values.reshape(self.geometry.h, self.geometry.w)

    def norm(self):
        return float(np.linalg.norm(self.values))

    def __repr__(self):
        return f"Signal(n={self.n}, geometry={self.geometry})"


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def cyclic_shift(x, offset):
    """Cyclically shift a signal: entry i of the result is entry i+offset.

    Line offsets are single integers, reduced modulo N (a full-period shift
    is the identity).  Grid offsets are (dy, dx) pairs with 0 <= dy < H and
    0 <= dx < W; anything else raises InvalidOffset.
    """
    geom = x.geometry
    if isinstance(geom, Line):
        if not _is_int(offset):
            raise InvalidOffset(f"Line geometry needs an integer offset, got {offset!r}")
        k = int(offset) % geom.n
        return Signal(np.roll(x.values, -k), geom)
    dy, dx = _grid_offset(offset, geom)
    shifted = np.roll(x.as_grid(), (-dy, -dx), axis=(0, 1))
    return Signal(shifted.ravel(), geom)


def _grid_offset(offset, geom):
    try:
        dy, dx = offset
    except (TypeError, ValueError):
        raise InvalidOffset(
            f"Grid geometry needs a (dy, dx) offset pair, got {offset!r}"
        ) from None
    if not (_is_int(dy) and _is_int(dx)):
        raise InvalidOffset(f"Grid offsets must be integer pairs, got {offset!r}")
    if not (0 <= dy < geom.h and 0 <= dx < geom.w):
        raise InvalidOffset(
            f"offset {offset!r} out of range for {geom.h}x{geom.w} grid"
        )
    return int(dy), int(dx)


class OffsetPattern:
    """Ordered distinct shift offsets defining the columns of a lift.

    Line patterns hold integers; grid patterns hold (dy, dx) pairs.  The
    number of offsets equals the filter size R.
    """

    __slots__ = ("offsets", "kind")

    def __init__(self, offsets):
        offsets = tuple(
            (int(o[0]), int(o[1])) if isinstance(o, (tuple, list, np.ndarray)) else int(o)
            for o in offsets
        )
        if len(offsets) == 0:
            raise ValueError("pattern needs at least one offset")
        if len(set(offsets)) != len(offsets):
            raise ValueError("pattern offsets must be distinct")
        kinds = {isinstance(o, tuple) for o in offsets}
        if len(kinds) != 1:
            raise ValueError("pattern mixes line and grid offsets")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "kind", "grid" if kinds.pop() else "line")

    def __setattr__(self, name, value):
        raise AttributeError("OffsetPattern is immutable")

    def __eq__(self, other):
        return isinstance(other, OffsetPattern) and self.offsets == other.offsets

    def __hash__(self):
        return hash(self.offsets)

    def __repr__(self):
        return f"OffsetPattern({self.offsets})"

    @property
    def r(self):
        return len(self.offsets)

    @classmethod
    def line(cls, r):
        """Canonical 1-D pattern (0, 1, ..., r-1)."""
        return cls(range(r))

    @classmethod
    def square(cls, h, w=None):
        """Row-major h x w window of (dy, dx) offsets."""
        if w is None:
            w = h
        return cls([(dy, dx) for dy in range(h) for dx in range(w)])

    @classmethod
    def for_filter_size(cls, r, geometry):
        """Canonical pattern for filter size r on the given geometry.

        Line geometry gets (0..r-1); Grid geometry gets the row-major square
        window, requiring r to be a perfect square.
        """
        if isinstance(geometry, Line):
            return cls.line(r)
        side = math.isqrt(r)
        if side * side != r:
            raise ValueError(
                f"filter size {r} is not a perfect square; pass an explicit pattern"
            )
        return cls.square(side)

    def validate_for(self, geometry):
        """Check every offset fits the geometry; raises InvalidOffset."""
        if isinstance(geometry, Line):
            if self.kind != "line":
                raise InvalidOffset("grid pattern applied to Line geometry")
            for o in self.offsets:
                if not 0 <= o < geometry.n:
                    raise InvalidOffset(
                        f"offset {o} out of range for Line({geometry.n})"
                    )
        elif isinstance(geometry, Grid):
            if self.kind != "grid":
                raise InvalidOffset("line pattern applied to Grid geometry")
            for o in self.offsets:
                _grid_offset(o, geometry)
        else:
            raise InvalidOffset(f"unknown geometry {geometry!r}")

    def as_array(self):
        """Offsets as an int64 array: (R,) for line, (R, 2) for grid."""
        return np.asarray(self.offsets, dtype=np.int64)
