"""Lifted convolution operators.

Convolving a length-R filter d with a signal x equals the matrix-vector
product Psi @ d, where the N x R lift Psi collects cyclically shifted copies
of x as columns.  Everything downstream (training and every error bound)
works with these lifts and the accumulations sum_l Psi_l^T Psi_l and
sum_l Psi_l^T E_l.
"""

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, EmptyDataset
from .signals import Grid, Line, OffsetPattern, Signal, cyclic_shift

__all__ = [
    "LiftedOperator",
    "build_lift",
    "convolve",
    "gram_accumulate",
    "adjoint_apply",
    "cyclic_shift",
]


class LiftedOperator:
    """Dense N x R matrix whose column r is the source signal shifted by
    pattern offset r.  Immutable; built via :func:`build_lift`."""

    __slots__ = ("matrix", "geometry", "pattern")

    def __init__(self, matrix, geometry, pattern):
        if matrix.shape != (geometry.size, pattern.r):
            raise DimensionMismatch(
                f"lift matrix {matrix.shape} does not match geometry/pattern "
                f"({geometry.size}, {pattern.r})"
            )
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "pattern", pattern)

    def __setattr__(self, name, value):
        raise AttributeError("LiftedOperator is immutable")

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def r(self):
        return self.matrix.shape[1]

    def __repr__(self):
        return f"LiftedOperator(n={self.n}, r={self.r}, geometry={self.geometry})"


def build_lift(x, pattern):
    """Materialize the lift of signal x under the given offset pattern."""
    pattern.validate_for(x.geometry)
    offs = pattern.as_array()
    if isinstance(x.geometry, Line):
        mat = _kernels.lift_line(x.values, offs)
    else:
        mat = _kernels.lift_grid(np.ascontiguousarray(x.as_grid()), offs)
    return LiftedOperator(mat, x.geometry, pattern)


def convolve(x, d, pattern):
    """Filter response Psi @ d, returned as a Signal on x's geometry."""
    d = np.asarray(d, dtype=np.float64).ravel()
    if d.size != pattern.r:
        raise DimensionMismatch(
            f"filter has {d.size} coefficients, pattern has {pattern.r} offsets"
        )
    lift = build_lift(x, pattern)
    return Signal(lift.matrix @ d, x.geometry)


def _check_compatible(lifts):
    lifts = list(lifts)
    if not lifts:
        raise EmptyDataset("no lifted operators given")
    first = lifts[0]
    for lift in lifts[1:]:
        if lift.r != first.r:
            raise DimensionMismatch(
                f"mixed filter sizes in lift sequence: {lift.r} vs {first.r}"
            )
        if lift.geometry != first.geometry:
            raise DimensionMismatch(
                f"mixed geometries in lift sequence: {lift.geometry} vs {first.geometry}"
            )
    return lifts


def gram_accumulate(lifts):
    """Accumulated Gram sum_l Psi_l^T Psi_l, symmetrized; (R, R) PSD."""
    lifts = _check_compatible(lifts)
    r = lifts[0].r
    gram = np.zeros((r, r))
    for lift in lifts:
        gram += lift.matrix.T @ lift.matrix
    return (gram + gram.T) / 2.0


def adjoint_apply(lift, m):
    """Adjoint product Psi^T M for an N x K matrix M."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != lift.n:
        raise DimensionMismatch(
            f"matrix rows {m.shape} do not match lift length {lift.n}"
        )
    return lift.matrix.T @ m
