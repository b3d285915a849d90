"""Linear dynamics ``x_{k+1} = M x_k``."""

import numpy as np

from ..errors import ContractError
from .base import ModelInterface

__all__ = ["LinearModel"]


class LinearModel(ModelInterface):
    """Constant linear model; one step of ``matrix`` per model step.

    Parameters
    ----------
    matrix : array_like, shape (n, n)
        Step operator.
    """

    is_linear = True

    def __init__(self, matrix):
        M = np.array(matrix, dtype=np.float64, copy=True)
        if M.ndim == 0:
            M = M.reshape(1, 1)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ContractError(f"model matrix must be square, got {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ContractError("model matrix contains NaN or Inf")
        M.setflags(write=False)
        self._M = M

    @property
    def matrix(self):
        return self._M

    @property
    def state_dimension(self):
        return self._M.shape[0]

    def interval_matrix(self, n_steps):
        """``M^n_steps`` as a dense array."""
        return np.linalg.matrix_power(self._M, int(n_steps))

    def trajectory(self, x0, n_steps):
        x = self.check_state(x0, "x0")
        out = np.empty((int(n_steps) + 1, x.size))
        out[0] = x
        for k in range(int(n_steps)):
            out[k + 1] = self._M @ out[k]
        return out

    def propagate(self, x0, n_steps):
        x = self.check_state(x0, "x0")
        for _ in range(int(n_steps)):
            x = self._M @ x
        return x

    def tangent_linear(self, x0, dx, n_steps):
        return self.propagate(dx, n_steps)

    def adjoint(self, x0, lam, n_steps):
        lam = self.check_state(lam, "lam")
        for _ in range(int(n_steps)):
            lam = self._M.T @ lam
        return lam

    def __repr__(self):
        return f"LinearModel(dim={self.state_dimension})"
