"""Shared base for per-sample matrix collections stored as (L, N, K) stacks."""

import numpy as np

from .errors import DimensionMismatch, EmptyDataset


class MatrixStack:
    __slots__ = ("stack",)

    def __init__(self, matrices):
        if isinstance(matrices, np.ndarray) and matrices.ndim == 3:
            stack = np.ascontiguousarray(matrices, dtype=np.float64)
        else:
            matrices = [np.asarray(m, dtype=np.float64) for m in matrices]
            if not matrices:
                raise EmptyDataset(f"{type(self).__name__} needs at least one sample")
            shape = matrices[0].shape
            for m in matrices:
                if m.ndim != 2 or m.shape != shape:
                    raise DimensionMismatch(
                        f"all {type(self).__name__} matrices must share N and K"
                    )
            stack = np.ascontiguousarray(np.stack(matrices, axis=0))
        if stack.shape[0] < 1:
            raise EmptyDataset(f"{type(self).__name__} needs at least one sample")
        stack.setflags(write=False)
        object.__setattr__(self, "stack", stack)

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    @property
    def l(self):
        return self.stack.shape[0]

    @property
    def n(self):
        return self.stack.shape[1]

    @property
    def k(self):
        return self.stack.shape[2]

    def sample(self, l):
        return self.stack[l]
