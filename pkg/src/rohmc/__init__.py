"""Reduced-order Hybrid Monte Carlo sampling smoother.

Full-space, reduced-space and approximate-gradient HMC smoothers for
four-dimensional data assimilation, a 4D-Var baseline, POD/Galerkin
reduced models, and closed-form Gaussian diagnostics.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    ModelDivergenceError,
    NonPhysicalStateError,
    NotPositiveDefiniteError,
    SamplerAbort,
    UnsupportedVariantError,
)
from .state import (
    CovarianceOperator,
    GaussianDensity,
    RngStream,
    gaussian_sample,
    log_density,
    weighted_norm_sq,
)

__all__ = [
    "__version__",
    "ConfigError",
    "ContractError",
    "CovarianceOperator",
    "DegenerateInputError",
    "GaussianDensity",
    "ModelDivergenceError",
    "NonPhysicalStateError",
    "NotPositiveDefiniteError",
    "RngStream",
    "SamplerAbort",
    "UnsupportedVariantError",
    "gaussian_sample",
    "log_density",
    "weighted_norm_sq",
]
