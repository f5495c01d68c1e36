"""Shared independent oracles used across the test modules.

These helpers deliberately avoid the library's own kernels: lifts are built
by naive Python indexing and Grams by explicit loops, so agreement between
library and oracle is meaningful.
"""

import numpy as np
import pytest


def lift_oracle_line(values, offsets):
    """Naive N x R lift: column r holds x[(i + offsets[r]) mod N]."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    out = np.zeros((n, len(offsets)))
    for r, off in enumerate(offsets):
        for i in range(n):
            out[i, r] = values[(i + off) % n]
    return out


def lift_oracle_grid(image, offsets):
    """Naive lift for a 2-D image: per-axis cyclic shifts, row-major."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    out = np.zeros((h * w, len(offsets)))
    for r, (dy, dx) in enumerate(offsets):
        for i in range(h):
            for j in range(w):
                out[i * w + j, r] = image[(i + dy) % h, (j + dx) % w]
    return out


def gram_oracle(lift_matrices):
    """Explicit sum of Psi^T Psi over a list of dense lifts."""
    r = lift_matrices[0].shape[1]
    gram = np.zeros((r, r))
    for m in lift_matrices:
        gram += m.T @ m
    return gram


def feasible_bank_oracle(rng, r, k):
    """Random matrix with D D^T = (1/R) I, built from a QR factorization
    (a different route than the library's SVD polar factor)."""
    q, _ = np.linalg.qr(rng.standard_normal((k, r)))
    # fix signs so the distribution does not collapse onto a QR convention
    q *= rng.choice([-1.0, 1.0], size=(1, r))
    return q.T / np.sqrt(r)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
