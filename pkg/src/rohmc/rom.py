"""POD bases, Galerkin reduced dynamics and reduced-order cost functions.

Two reduced potentials are provided:

* :class:`ReducedCost` lives in the ``n_red``-dimensional coefficient
  space.  Dynamics lift with ``V``, propagate with the full model and
  restrict with ``V^T``; its gradient uses the reduced adjoint
  ``V^T M^T V`` linearized at the lifted states.
* :class:`ApproxFullCost` lives in full space.  The background term is
  exact while the observation terms follow the projected trajectory
  ``x_k = P M(P x_{k-1})`` with ``P = V V^T``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DegenerateInputError
from .fourdvar import adjoint_sweep, background_cost
from .io import read_array, sha256_bytes, write_array
from .state import CovarianceOperator, as_state

__all__ = [
    "ApproxFullCost",
    "PodBasis",
    "ReducedCost",
    "ReducedModel",
    "approx_full_cost",
    "approx_full_gradient",
    "assemble_snapshots",
    "build_basis",
    "energy_fraction",
    "initial_basis",
    "load_basis",
    "reduced_cost",
    "reduced_gradient",
    "reduced_propagate",
    "refresh_basis",
    "save_basis",
]

_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class PodBasis:
    """Orthonormal reduced basis.

    Attributes
    ----------
    V : ndarray, shape (N, n_red)
        Orthonormal columns.
    singular_values : ndarray
        All singular values of the snapshot matrix, retained and discarded.
    gamma : float
        Energy threshold used for truncation.
    provenance : dict
        Free-form record of how the snapshots were produced.
    """

    V: np.ndarray
    singular_values: np.ndarray
    gamma: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        V = np.array(self.V, dtype=np.float64, copy=True)
        if V.ndim != 2 or V.shape[1] < 1 or V.shape[1] > V.shape[0]:
            raise ContractError(f"basis must be N x n_red with 1 <= n_red <= N, got {V.shape}")
        err = np.max(np.abs(V.T @ V - np.eye(V.shape[1])))
        if err >= _ORTHO_TOL:
            raise ContractError(f"basis columns not orthonormal (max |V^T V - I| = {err:.2e})")
        V.setflags(write=False)
        s = np.array(self.singular_values, dtype=np.float64, copy=True)
        s.setflags(write=False)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "singular_values", s)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def dim(self):
        return self.V.shape[0]

    @property
    def n_red(self):
        return self.V.shape[1]

    @property
    def projector(self):
        """Dense ``P = V V^T``."""
        return self.V @ self.V.T

    @property
    def energy(self):
        """Cumulative energy fractions ``I(p)`` for ``p = 1..len(singular_values)``."""
        return energy_fraction(self.singular_values)

    @property
    def basis_id(self):
        """Short content hash of ``V``."""
        return sha256_bytes(np.ascontiguousarray(self.V, dtype="<f8").tobytes())[:16]

    def lift(self, x_red):
        return self.V @ x_red

    def restrict(self, x):
        return self.V.T @ x

    def project(self, x):
        return self.V @ (self.V.T @ x)

    def metadata(self):
        return {
            "basis_id": self.basis_id,
            "n_full": self.dim,
            "n_red": self.n_red,
            "gamma": self.gamma,
            "singular_values": self.singular_values.tolist(),
            "provenance": self.provenance,
        }


def energy_fraction(singular_values):
    """``I(p) = sum_{i<=p} s_i / sum_i s_i``, with the last entry pinned to 1."""
    s = np.asarray(singular_values, dtype=np.float64)
    total = s.sum()
    if total <= 0:
        raise DegenerateInputError("singular values sum to zero")
    I = np.cumsum(s) / total
    I[-1] = 1.0
    return I


def build_basis(snapshots, gamma=0.99, center=False, provenance=None):
    """POD basis of a snapshot matrix.

    Parameters
    ----------
    snapshots : array_like, shape (N, n_snap)
        Snapshot columns.
    gamma : float in (0, 1]
        Keep the smallest ``p`` with ``I(p) >= gamma``.
    center : bool
        Subtract the column mean before the SVD.  The basis is still used
        as a linear subspace.
    provenance : dict, optional
        Stored on the basis.

    Returns
    -------
    PodBasis
    """
    X = np.array(snapshots, dtype=np.float64, copy=True)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[1] < 1:
        raise ContractError("snapshot matrix must be 2-D with at least one column")
    if not np.all(np.isfinite(X)):
        raise ContractError("snapshot matrix contains NaN or Inf")
    if not (0.0 < gamma <= 1.0):
        raise ContractError(f"gamma must lie in (0, 1], got {gamma}")
    if center:
        X -= X.mean(axis=1, keepdims=True)
    if not np.any(X):
        raise DegenerateInputError("snapshot matrix is identically zero")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    I = energy_fraction(s)
    n_red = int(np.argmax(I >= gamma)) + 1
    V = U[:, :n_red].copy()
    # deterministic sign: largest-magnitude entry of each column positive
    piv = np.argmax(np.abs(V), axis=0)
    V *= np.sign(V[piv, np.arange(n_red)])
    prov = dict(provenance or {})
    prov.setdefault("n_snapshots", int(X.shape[1]))
    prov["centered"] = bool(center)
    return PodBasis(V, s, gamma, prov)


def save_basis(basis, path, seed=None):
    """Write ``V`` column-major to ``path`` with a JSON sidecar."""
    meta = basis.metadata()
    if seed is not None:
        meta["seed"] = int(seed)
    return write_array(path, basis.V, order="F", meta=meta)


def load_basis(path):
    V, side = read_array(path)
    meta = side.get("meta", {})
    return PodBasis(V, meta.get("singular_values", []), meta.get("gamma", 1.0),
                    meta.get("provenance", {}))


# snapshots -------------------------------------------------------------------

def _unit_columns(cols):
    out = []
    for c in cols:
        n = np.linalg.norm(c)
        if n > 0 and np.isfinite(n):
            out.append(c / n)
    return out


def assemble_snapshots(states, lambdas=(), gradient=None, normalize_adjoint=True):
    """Stack forward, adjoint and gradient snapshots as columns.

    Adjoint and gradient columns are scaled to unit norm when
    ``normalize_adjoint`` is set; all-zero columns are dropped either way.
    """
    cols = [np.asarray(x, dtype=np.float64) for x in states]
    extra = [np.asarray(l, dtype=np.float64) for l in lambdas]
    if gradient is not None:
        extra.append(np.asarray(gradient, dtype=np.float64))
    if normalize_adjoint:
        extra = _unit_columns(extra)
    else:
        extra = [c for c in extra if np.any(c)]
    cols = [c for c in cols if np.any(c)] + extra
    if not cols:
        raise DegenerateInputError("no non-zero snapshots")
    return np.column_stack(cols)


def refresh_basis(current_x0, win, gamma=0.99, normalize_adjoint=True, center=False,
                  intermediate=False, label="refresh"):
    """New basis from full forward/adjoint sweeps started at ``current_x0``.

    Snapshots are the forward states and adjoint variables at every
    observation boundary plus the 4D-Var gradient.  With ``intermediate``
    the forward states at every model step are used instead.
    """
    x0 = as_state(current_x0, win.dim, name="current_x0")
    states, lambdas = adjoint_sweep(win, x0)
    grad = win.B.solve(states[0] - win.xb) - lambdas[0]
    fwd = states
    if intermediate:
        fwd = win.model.trajectory(x0, win.n_intervals * win.steps_per_interval)
    X = assemble_snapshots(fwd, lambdas, grad, normalize_adjoint)
    prov = {
        "kind": label,
        "x0_sha256": sha256_bytes(np.ascontiguousarray(x0, dtype="<f8").tobytes()),
        "n_forward": int(len(fwd)),
        "n_adjoint": int(len(lambdas)),
        "gradient": True,
        "normalize_adjoint": bool(normalize_adjoint),
        "intermediate": bool(intermediate),
    }
    return build_basis(X, gamma, center=center, provenance=prov)


def initial_basis(win, gamma=0.99, **kwargs):
    """Basis from sweeps started at the background state."""
    return refresh_basis(win.xb, win, gamma, label="background", **kwargs)


# reduced dynamics -----------------------------------------------------------

class ReducedModel:
    """Galerkin reduced dynamics ``x_red -> V^T M(V x_red)`` per interval."""

    def __init__(self, basis, full_model, steps_per_interval=1):
        if basis.dim != full_model.state_dimension:
            raise ContractError("basis and model dimensions differ")
        self.basis = basis
        self.full_model = full_model
        self.steps_per_interval = int(steps_per_interval)

    @property
    def state_dimension(self):
        return self.basis.n_red

    def step(self, x_red):
        V = self.basis.V
        return V.T @ self.full_model.propagate(V @ x_red, self.steps_per_interval)

    def adjoint_step(self, x_red, lam_red):
        """``V^T M^T V lam_red`` with ``M`` linearized at ``V x_red``."""
        V = self.basis.V
        return V.T @ self.full_model.adjoint(V @ x_red, V @ lam_red, self.steps_per_interval)

    def matrix(self):
        """``V^T M_interval V`` for a linear full model."""
        if not getattr(self.full_model, "is_linear", False):
            raise ContractError("reduced matrix requires a linear full model")
        V = self.basis.V
        return V.T @ self.full_model.interval_matrix(self.steps_per_interval) @ V

    def trajectory(self, x_red, n_intervals):
        x = as_state(x_red, self.basis.n_red, name="x_red")
        out = np.empty((int(n_intervals) + 1, x.size))
        out[0] = x
        for k in range(int(n_intervals)):
            out[k + 1] = self.step(out[k])
        return out


def reduced_propagate(rm, x_red0, n_intervals):
    """Reduced trajectory over ``n_intervals`` observation intervals."""
    return rm.trajectory(x_red0, n_intervals)


def _reduced_background(win, basis):
    V = basis.V
    if win.B.is_diagonal:
        Bt = (V * win.B.diagonal()[:, None]).T @ V
    else:
        Bt = V.T @ win.B.apply(V)
    op = CovarianceOperator(Bt)
    if not op.positive_definite:
        raise ContractError("V^T B V is not positive definite")
    return op


class ReducedCost:
    """Reduced-space 4D-Var cost and its reduced adjoint gradient.

    Caches ``V^T B V`` and ``V^T xb`` for one (window, basis) pair.
    """

    tag = "reduced"

    def __init__(self, win, basis):
        if basis.dim != win.dim:
            raise ContractError("basis and window dimensions differ")
        self.win = win
        self.basis = basis
        self.model = ReducedModel(basis, win.model, win.steps_per_interval)
        self.B_red = _reduced_background(win, basis)
        self.xb_red = basis.restrict(win.xb)

    @property
    def dim(self):
        return self.basis.n_red

    def trajectory(self, x_red0):
        return self.model.trajectory(x_red0, self.win.n_intervals)

    def background(self, x_red0):
        d = x_red0 - self.xb_red
        return 0.5 * float(d @ self.B_red.solve(d))

    def observation_cost(self, x_red0, traj=None):
        if traj is None:
            traj = self.trajectory(x_red0)
        V = self.basis.V
        return float(sum(o.cost(V @ traj[o.index]) for o in self.win.observations))

    def cost(self, x_red0):
        x_red0 = as_state(x_red0, self.dim, name="x_red0")
        traj = self.trajectory(x_red0)
        return self.background(x_red0) + self.observation_cost(x_red0, traj)

    def adjoint_sweep(self, x_red0):
        traj = self.trajectory(x_red0)
        V = self.basis.V
        N = self.win.n_intervals
        lam = np.zeros_like(traj)
        o = self.win.observations.at(N)
        if o is not None:
            lam[N] = V.T @ o.forcing(V @ traj[N])
        for k in range(N - 1, -1, -1):
            l = self.model.adjoint_step(traj[k], lam[k + 1])
            o = self.win.observations.at(k)
            if o is not None:
                l = l + V.T @ o.forcing(V @ traj[k])
            lam[k] = l
        return traj, lam

    def cost_and_gradient(self, x_red0):
        x_red0 = as_state(x_red0, self.dim, name="x_red0")
        traj, lam = self.adjoint_sweep(x_red0)
        J = self.background(x_red0) + self.observation_cost(x_red0, traj)
        g = self.B_red.solve(x_red0 - self.xb_red) - lam[0]
        return J, g

    def gradient(self, x_red0):
        return self.cost_and_gradient(x_red0)[1]


class ApproxFullCost:
    """Full-space cost whose observation terms follow the projected dynamics."""

    tag = "approx_full"

    def __init__(self, win, basis):
        if basis.dim != win.dim:
            raise ContractError("basis and window dimensions differ")
        self.win = win
        self.basis = basis

    @property
    def dim(self):
        return self.win.dim

    def trajectory(self, x0):
        """``x_0 = x0`` then ``x_k = P M(P x_{k-1})``."""
        b, win = self.basis, self.win
        out = np.empty((win.n_intervals + 1, x0.size))
        out[0] = x0
        for k in range(win.n_intervals):
            out[k + 1] = b.project(win.interval_propagate(b.project(out[k])))
        return out

    def observation_cost(self, x0, traj=None):
        if traj is None:
            traj = self.trajectory(x0)
        return float(sum(o.cost(traj[o.index]) for o in self.win.observations))

    def cost(self, x0):
        x0 = as_state(x0, self.dim, name="x0")
        traj = self.trajectory(x0)
        return background_cost(self.win, x0) + self.observation_cost(x0, traj)

    def adjoint_sweep(self, x0):
        b, win = self.basis, self.win
        traj = self.trajectory(x0)
        N = win.n_intervals
        lam = np.zeros_like(traj)
        o = win.observations.at(N)
        if o is not None:
            lam[N] = o.forcing(traj[N])
        for k in range(N - 1, -1, -1):
            l = b.project(win.interval_adjoint(b.project(traj[k]), b.project(lam[k + 1])))
            o = win.observations.at(k)
            if o is not None:
                l = l + o.forcing(traj[k])
            lam[k] = l
        return traj, lam

    def cost_and_gradient(self, x0):
        x0 = as_state(x0, self.dim, name="x0")
        traj, lam = self.adjoint_sweep(x0)
        J = background_cost(self.win, x0) + self.observation_cost(x0, traj)
        g = self.win.B.solve(x0 - self.win.xb) - lam[0]
        return J, g

    def gradient(self, x0):
        return self.cost_and_gradient(x0)[1]


def reduced_cost(win, basis, x_red0):
    return ReducedCost(win, basis).cost(x_red0)


def reduced_gradient(win, basis, x_red0):
    return ReducedCost(win, basis).gradient(x_red0)


def approx_full_cost(win, basis, x0):
    return ApproxFullCost(win, basis).cost(x0)


def approx_full_gradient(win, basis, x0):
    return ApproxFullCost(win, basis).gradient(x0)
