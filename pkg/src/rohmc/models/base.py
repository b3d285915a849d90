"""Abstract forward-model contract and generic helpers."""

from abc import ABC, abstractmethod

import numpy as np

from ..errors import ContractError
from ..state import as_state

__all__ = ["ModelInterface", "assemble_jacobian", "propagate"]


class ModelInterface(ABC):
    """Discrete-time dynamics with tangent-linear and adjoint actions.

    Time is counted in model steps.  Every method that takes ``n_steps``
    linearizes along the trajectory that starts at the given state, so
    callers never pass stored trajectories around.
    """

    #: True when the dynamics are linear in the state.
    is_linear = False

    @property
    @abstractmethod
    def state_dimension(self):
        """Length of a full state vector."""

    @abstractmethod
    def trajectory(self, x0, n_steps):
        """States after 0, 1, ..., ``n_steps`` steps, shape ``(n_steps + 1, N)``."""

    @abstractmethod
    def tangent_linear(self, x0, dx, n_steps):
        """Jacobian of ``propagate(., n_steps)`` at ``x0`` applied to ``dx``."""

    @abstractmethod
    def adjoint(self, x0, lam, n_steps):
        """Transposed Jacobian of ``propagate(., n_steps)`` at ``x0`` applied to ``lam``."""

    def propagate(self, x0, n_steps):
        """State after ``n_steps`` steps."""
        return self.trajectory(x0, n_steps)[-1]

    def adjoint_step(self, x_ref, lam):
        """One-step adjoint ``M(x_ref)^T lam``."""
        return self.adjoint(x_ref, lam, 1)

    def check_state(self, x, name="state"):
        return as_state(x, self.state_dimension, name=name)


def propagate(model, x0, n_steps, every=1):
    """Trajectory of ``model`` from ``x0``.

    Returns an array whose first row is ``x0`` and whose rows are spaced
    ``every`` steps apart; ``n_steps`` must be a multiple of ``every``.
    """
    n_steps, every = int(n_steps), int(every)
    if n_steps < 0 or every < 1 or n_steps % every:
        raise ContractError(f"n_steps={n_steps} must be a non-negative multiple of every={every}")
    x0 = model.check_state(x0, "x0")
    traj = model.trajectory(x0, n_steps)
    return traj[::every].copy()


def assemble_jacobian(model, x0, n_steps, method="tlm", eps=1e-6):
    """Dense Jacobian of the ``n_steps`` map at ``x0``, column by column.

    ``method="tlm"`` probes the tangent-linear model; ``method="fd"`` uses
    central differences of :meth:`ModelInterface.propagate` with step
    ``eps`` scaled by ``max(1, |x0|_inf)``.
    """
    x0 = model.check_state(x0, "x0")
    n = x0.size
    J = np.empty((n, n))
    if method == "tlm":
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            J[:, k] = model.tangent_linear(x0, e, n_steps)
    elif method == "fd":
        h = eps * max(1.0, float(np.max(np.abs(x0))))
        for k in range(n):
            xp = x0.copy()
            xm = x0.copy()
            xp[k] += h
            xm[k] -= h
            J[:, k] = (model.propagate(xp, n_steps) - model.propagate(xm, n_steps)) / (2.0 * h)
    else:
        raise ContractError(f"unknown method {method!r}")
    return J
