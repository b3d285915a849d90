"""Exception types shared across the package."""

import numpy as np


class ContractError(ValueError):
    """Inputs violate an operation's preconditions (shape, finiteness)."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A covariance operator could not be Cholesky-factorized."""


class ModelDivergenceError(RuntimeError):
    """Model integration produced non-finite or non-physical values.

    Attributes
    ----------
    step : int
        Index of the model step (1-based, counted from the start of the
        propagation call) at which the failure was detected.
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class NonPhysicalStateError(ValueError):
    """A state lies outside the model's physical domain (e.g. phi <= 0)."""


class SamplerAbort(RuntimeError):
    """The Markov chain could not make progress (no acceptances)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateInputError(ValueError):
    """Statistic is undefined for the given inputs."""


class UnsupportedVariantError(ValueError):
    """Operation requires a linear model/operator but got something else."""


class ConfigError(ValueError):
    """Experiment configuration failed validation.

    Attributes
    ----------
    path : str
        Dotted path to the offending key.
    """

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path
