"""Forward models with tangent-linear and adjoint actions."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .base import ModelInterface, assemble_jacobian, propagate
from .linear import LinearModel
from .swe import ShallowWaterModel, swe_rhs

__all__ = [
    "KERNEL_BACKEND",
    "LinearModel",
    "ModelInterface",
    "ShallowWaterModel",
    "assemble_jacobian",
    "propagate",
    "swe_rhs",
]
