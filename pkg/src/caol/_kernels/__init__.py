"""Kernel backend selection.

The compiled Cython backend is preferred when importable; the numpy backend
is the fallback.  ``CAOL_KERNELS=numpy`` or ``CAOL_KERNELS=cython`` forces a
choice (forcing cython raises if the extension is missing).
"""

import os

from . import _numpy as _numpy_backend

_requested = os.environ.get("CAOL_KERNELS", "auto").strip().lower()

if _requested in ("auto", "", "cython", "fast"):
    try:
        from . import _fastops as _impl
        BACKEND = "cython"
    except ImportError:
        if _requested in ("cython", "fast"):
            raise
        _impl = _numpy_backend
        BACKEND = "numpy"
elif _requested == "numpy":
    _impl = _numpy_backend
    BACKEND = "numpy"
else:
    raise ImportError(
        f"CAOL_KERNELS={_requested!r} not recognized (use auto, cython, or numpy)"
    )

lift_line = _impl.lift_line
lift_grid = _impl.lift_grid
hard_threshold = _impl.hard_threshold
residual_sqnorm = _impl.residual_sqnorm
impulse_adjoint_accumulate = _impl.impulse_adjoint_accumulate


def backend():
    """Name of the active kernel backend ('cython' or 'numpy')."""
    return BACKEND
