"""Pure-numpy implementations of the hot kernels.

Fallback backend used when the compiled extension is unavailable (or when
``CAOL_KERNELS=numpy`` forces it).  Semantics must match
``caol._kernels._fastops`` exactly; only summation order may differ, within
1e-12 relative.
"""

import numpy as np


def lift_line(x, offsets):
    """Columns of the lifted operator for a 1-D signal.

    x: (N,) float64.  offsets: (R,) int64, each in [0, N).
    Returns (N, R) with column r equal to x cyclically shifted by offsets[r].
    """
    n = x.shape[0]
    idx = (np.arange(n)[:, None] + offsets[None, :]) % n
    return np.ascontiguousarray(x[idx])


def lift_grid(x, offsets):
    """Columns of the lifted operator for a 2-D signal.

    x: (H, W) float64.  offsets: (R, 2) int64 rows (dy, dx) in range.
    Returns (H*W, R); each column is the per-axis cyclic shift, row-major.
    """
    cols = [np.roll(x, (-int(dy), -int(dx)), axis=(0, 1)).ravel()
            for dy, dx in offsets]
    return np.ascontiguousarray(np.stack(cols, axis=1))


def hard_threshold(v, alpha):
    """Elementwise l0 prox: keep v where v*v > alpha, else 0.

    Returns (thresholded array, nonzero count).  Ties v*v == alpha zero out.
    """
    mask = v * v > alpha
    out = np.where(mask, v, 0.0)
    return out, int(np.count_nonzero(mask))


def residual_sqnorm(a, b):
    """Sum of squared differences between two equal-shape arrays."""
    d = (a - b).ravel()
    return float(np.dot(d, d))


def impulse_adjoint_accumulate(e, pos, r):
    """Sum of lift-adjoint products for unit-impulse signals.

    e: (L, N, K) mismatch stack; pos: (L,) impulse positions.  The lift of an
    impulse at j has column r' equal to the impulse at (j - r') mod N, so the
    adjoint product selects rows (j - r') of E.  Returns (R, K).
    """
    n = e.shape[1]
    rows = (pos[:, None] - np.arange(r)[None, :]) % n
    gathered = e[np.arange(e.shape[0])[:, None], rows, :]
    return gathered.sum(axis=0)
