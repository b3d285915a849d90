"""Shallow-water equations on a beta-plane channel.

Prognostic variables are the velocities ``u``, ``v`` and the geopotential
speed ``phi = 2 sqrt(g h)``.  The domain is periodic in x and bounded by
walls in y.  Time stepping is classical RK4 followed by a boundary
projection; tangent-linear and adjoint sweeps are the exact derivatives
of that discrete map.
"""

import numpy as np

from ..errors import ContractError, ModelDivergenceError, NonPhysicalStateError
from . import _swe_numba, _swe_numpy
from ._kernels import BACKEND
from ._swe_numpy import CODE_NONPHYSICAL
from .base import ModelInterface

__all__ = ["ShallowWaterModel", "swe_rhs"]

_KERNELS = {"numpy": _swe_numpy, "numba": _swe_numba}


class ShallowWaterModel(ModelInterface):
    """Desk-scale nondimensional shallow-water model.

    Parameters
    ----------
    nx, ny : int
        Grid points in x (periodic) and y (walls at both ends, ``ny >= 3``).
    L, D : float
        Channel length and width.
    g : float
        Gravity.
    f_hat, beta : float
        Coriolis parameter ``f = f_hat + beta (y - D/2)``.
    dt : float
        RK4 time step.
    kernels : {"auto", "numba", "numpy"}
        Kernel implementation; ``"auto"`` follows the package default.

    Notes
    -----
    The state vector is the C-order flattening of ``w[var, i, j]`` with
    ``var`` in (u, v, phi), so ``N = 3 nx ny``.  Grid spacing is
    ``dx = L / nx`` and ``dy = D / (ny - 1)``.
    """

    def __init__(self, nx=15, ny=15, L=1.0, D=1.0, g=1.0, f_hat=5.0, beta=2.0,
                 dt=0.02, kernels="auto"):
        nx, ny = int(nx), int(ny)
        if nx < 3 or ny < 3:
            raise ContractError(f"grid must be at least 3x3, got {nx}x{ny}")
        for name, val in (("L", L), ("D", D), ("g", g), ("dt", dt)):
            if not (np.isfinite(val) and val > 0):
                raise ContractError(f"{name} must be positive, got {val}")
        if kernels == "auto":
            kernels = BACKEND
        if kernels not in _KERNELS:
            raise ContractError(f"unknown kernels {kernels!r}")
        self.nx, self.ny = nx, ny
        self.L, self.D, self.g = float(L), float(D), float(g)
        self.f_hat, self.beta, self.dt = float(f_hat), float(beta), float(dt)
        self.kernels = kernels
        self._k = _KERNELS[kernels]
        self.dx = self.L / nx
        self.dy = self.D / (ny - 1)
        self.y = np.arange(ny) * self.dy
        self.f = self.f_hat + self.beta * (self.y - 0.5 * self.D)
        self.f.setflags(write=False)

    # layout -------------------------------------------------------------
    @property
    def shape(self):
        return (3, self.nx, self.ny)

    @property
    def state_dimension(self):
        return 3 * self.nx * self.ny

    def to_fields(self, x):
        """View a flat state as ``(u, v, phi)`` arrays of shape ``(nx, ny)``."""
        return np.asarray(x, dtype=np.float64).reshape(self.shape)

    def from_fields(self, w):
        return np.ascontiguousarray(w, dtype=np.float64).reshape(-1)

    def params(self):
        return dict(nx=self.nx, ny=self.ny, L=self.L, D=self.D, g=self.g,
                    f_hat=self.f_hat, beta=self.beta, dt=self.dt)

    def with_kernels(self, kernels):
        return ShallowWaterModel(kernels=kernels, **self.params())

    def __repr__(self):
        p = ", ".join(f"{k}={v}" for k, v in self.params().items())
        return f"ShallowWaterModel({p}, kernels={self.kernels!r})"

    # physics --------------------------------------------------------------
    def validate(self, x):
        """Raise :class:`NonPhysicalStateError` unless ``phi > 0`` everywhere."""
        w = self.to_fields(self.check_state(x))
        bad = np.argwhere(w[2] <= 0.0)
        if bad.size:
            i, j = bad[0]
            raise NonPhysicalStateError(f"phi <= 0 at grid point (i={i}, j={j})")
        return x

    def depth(self, x):
        """Fluid depth ``h = phi^2 / (4 g)``."""
        return self.to_fields(x)[2] ** 2 / (4.0 * self.g)

    def rest_state(self, depth=1.0):
        """Fluid at rest with uniform depth."""
        w = np.zeros(self.shape)
        w[2] = 2.0 * np.sqrt(self.g * depth)
        return self.from_fields(w)

    def balanced_state(self, amplitude=0.1, width=0.1, center=(0.5, 0.5), depth=1.0):
        """Gaussian bump in ``phi`` with geostrophically balanced winds.

        ``width`` and ``center`` are fractions of the domain size.  Winds
        come from the discrete balance ``v = phi phi_x / (2f)`` and
        ``u = -phi phi_y / (2f)``; boundary conditions are applied last.
        """
        xs = (np.arange(self.nx) + 0.5) * self.dx
        X, Y = np.meshgrid(xs, self.y, indexing="ij")
        x0, y0 = center[0] * self.L, center[1] * self.D
        sx, sy = width * self.L, width * self.D
        phi0 = 2.0 * np.sqrt(self.g * depth)
        phi = phi0 + amplitude * np.exp(-0.5 * (((X - x0) / sx) ** 2 + ((Y - y0) / sy) ** 2))
        cx, cy = 0.5 / self.dx, 0.5 / self.dy
        px = (np.roll(phi, -1, 0) - np.roll(phi, 1, 0)) * cx
        py = np.zeros_like(phi)
        py[:, 1:-1] = (phi[:, 2:] - phi[:, :-2]) * cy
        f = np.where(np.abs(self.f) > 1e-12, self.f, np.inf)
        w = np.empty(self.shape)
        w[0] = -phi * py / (2.0 * f)
        w[1] = phi * px / (2.0 * f)
        w[2] = phi
        return self.from_fields(self._k.apply_bc(w))

    def rhs(self, x):
        """Continuous-in-time tendency of the flat state ``x``."""
        self.validate(x)
        w = self.to_fields(x)
        return self.from_fields(self._k.rhs(np.ascontiguousarray(w), self.dx, self.dy, self.f))

    def apply_bc(self, x):
        return self.from_fields(self._k.apply_bc(self.to_fields(x)))

    # dynamics -------------------------------------------------------------
    def _fail(self, step, code):
        what = "phi <= 0" if code == CODE_NONPHYSICAL else "non-finite values"
        raise ModelDivergenceError(f"SWE integration produced {what} at step {step}", step=step)

    def _forward_fields(self, x0, n_steps):
        w0 = np.ascontiguousarray(self.to_fields(self.check_state(x0, "x0")))
        traj, fail, code = self._k.forward(w0, int(n_steps), self.dt, self.dx, self.dy, self.f)
        if fail >= 0:
            self._fail(fail, code)
        return traj

    def trajectory(self, x0, n_steps):
        traj = self._forward_fields(x0, n_steps)
        return traj.reshape(traj.shape[0], -1)

    def tangent_linear(self, x0, dx, n_steps):
        w0 = np.ascontiguousarray(self.to_fields(self.check_state(x0, "x0")))
        d0 = np.ascontiguousarray(self.to_fields(self.check_state(dx, "dx")))
        _, dw, fail, code = self._k.tangent(w0, d0, int(n_steps), self.dt, self.dx, self.dy, self.f)
        if fail >= 0:
            self._fail(fail, code)
        return self.from_fields(dw)

    def adjoint(self, x0, lam, n_steps):
        traj = self._forward_fields(x0, n_steps)
        lw = np.ascontiguousarray(self.to_fields(self.check_state(lam, "lam")))
        return self.from_fields(self._k.adjoint(traj, lw, self.dt, self.dx, self.dy, self.f))

    def propagate_with_adjoint(self, x0, lam, n_steps):
        """Final state and adjoint from a single forward sweep."""
        traj = self._forward_fields(x0, n_steps)
        lw = np.ascontiguousarray(self.to_fields(self.check_state(lam, "lam")))
        lam0 = self._k.adjoint(traj, lw, self.dt, self.dx, self.dy, self.f)
        return traj[-1].reshape(-1), self.from_fields(lam0)


def swe_rhs(model, w):
    """Tendency of the shallow-water system at flat state ``w``."""
    return model.rhs(w)
