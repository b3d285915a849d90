"""Kernel selection for the shallow-water model."""

from .._accel import USE_NUMBA

if USE_NUMBA:
    from . import _swe_numba as swe_kernels
    BACKEND = "numba"
else:
    from . import _swe_numpy as swe_kernels
    BACKEND = "numpy"

__all__ = ["BACKEND", "swe_kernels"]
