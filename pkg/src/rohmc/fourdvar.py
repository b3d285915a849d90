"""Strong-constraint 4D-Var: cost, adjoint gradient and minimizer.

Observation times are counted in *intervals*: observation ``k`` is taken
after ``k * steps_per_interval`` model steps.  The window spans
``n_intervals`` intervals, which defaults to the last observation index.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .errors import ContractError
from .state import CovarianceOperator, as_state

__all__ = [
    "AssimilationWindow",
    "IdentityObservation",
    "MatrixObservation",
    "MinimizeResult",
    "Observation",
    "ObservationOperator",
    "ObservationSet",
    "SubsampleObservation",
    "adjoint_sweep",
    "background_cost",
    "cost",
    "cost_and_gradient",
    "forecast",
    "gradient",
    "minimize",
    "observation_cost",
]


# observation operators --------------------------------------------------

class ObservationOperator(ABC):
    """Map from state space to observation space."""

    is_linear = True

    def __init__(self, input_dim, output_dim):
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)

    @abstractmethod
    def apply(self, x):
        """``H(x)``."""

    def jvp(self, x, dx):
        """Jacobian of ``H`` at ``x`` applied to ``dx``; linear default."""
        return self.apply(dx)

    @abstractmethod
    def adjoint(self, x, r):
        """Transposed Jacobian of ``H`` at ``x`` applied to ``r``."""

    def matrix(self):
        """Dense Jacobian (linear operators only)."""
        return np.column_stack([self.apply(e) for e in np.eye(self.input_dim)])

    def to_dict(self):
        raise NotImplementedError


class IdentityObservation(ObservationOperator):
    def __init__(self, dim):
        super().__init__(dim, dim)

    def apply(self, x):
        return np.asarray(x, dtype=np.float64)

    def adjoint(self, x, r):
        return np.asarray(r, dtype=np.float64)

    def matrix(self):
        return np.eye(self.input_dim)

    def to_dict(self):
        return {"type": "identity"}


class SubsampleObservation(ObservationOperator):
    """Observe the state entries listed in ``indices``."""

    def __init__(self, indices, dim):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        if idx.size == 0 or idx.min() < 0 or idx.max() >= dim:
            raise ContractError("subsample indices out of range")
        if np.unique(idx).size != idx.size:
            raise ContractError("subsample indices must be distinct")
        super().__init__(dim, idx.size)
        self.indices = idx

    def apply(self, x):
        return np.asarray(x, dtype=np.float64)[self.indices]

    def adjoint(self, x, r):
        out = np.zeros(self.input_dim)
        out[self.indices] = r
        return out

    def to_dict(self):
        return {"type": "subsample", "indices": self.indices.tolist()}


class MatrixObservation(ObservationOperator):
    def __init__(self, H):
        H = np.array(H, dtype=np.float64, copy=True)
        if H.ndim != 2:
            raise ContractError("observation matrix must be 2-D")
        super().__init__(H.shape[1], H.shape[0])
        H.setflags(write=False)
        self.H = H

    def apply(self, x):
        return self.H @ x

    def adjoint(self, x, r):
        return self.H.T @ r

    def matrix(self):
        return self.H.copy()

    def to_dict(self):
        return {"type": "matrix", "matrix": self.H.tolist()}


# observations and windows -------------------------------------------------

@dataclass(frozen=True)
class Observation:
    """One observation vector ``y`` at interval index ``index``."""

    index: int
    y: np.ndarray
    operator: ObservationOperator
    R: CovarianceOperator

    def __post_init__(self):
        object.__setattr__(self, "index", int(self.index))
        if self.index < 0:
            raise ContractError("observation index must be non-negative")
        y = as_state(self.y, self.operator.output_dim, name=f"y[{self.index}]").copy()
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if not isinstance(self.R, CovarianceOperator):
            object.__setattr__(self, "R", CovarianceOperator(self.R))
        if self.R.dim != y.size:
            raise ContractError(f"R dimension {self.R.dim} != observation size {y.size}")
        if not self.R.positive_definite:
            raise ContractError(f"R[{self.index}] is not positive definite")

    def innovation(self, x):
        """``y - H(x)``."""
        return self.y - self.operator.apply(x)

    def cost(self, x):
        d = self.innovation(x)
        return 0.5 * float(d @ self.R.solve(d))

    def forcing(self, x):
        """``H^T R^{-1} (y - H(x))``, the adjoint forcing term."""
        return self.operator.adjoint(x, self.R.solve(self.innovation(x)))


class ObservationSet:
    """Observations sorted by interval index, at most one per index."""

    def __init__(self, observations=()):
        obs = sorted(observations, key=lambda o: o.index)
        idx = [o.index for o in obs]
        if len(set(idx)) != len(idx):
            raise ContractError("duplicate observation index")
        self._obs = tuple(obs)
        self._by_index = {o.index: o for o in obs}

    def __iter__(self):
        return iter(self._obs)

    def __len__(self):
        return len(self._obs)

    def __getitem__(self, k):
        return self._obs[k]

    def at(self, index):
        """Observation at interval ``index`` or ``None``."""
        return self._by_index.get(int(index))

    @property
    def times(self):
        return [o.index for o in self._obs]

    @property
    def last_index(self):
        return self._obs[-1].index if self._obs else 0


class AssimilationWindow:
    """Prior, observations and dynamics over one assimilation window.

    Parameters
    ----------
    prior : GaussianDensity
        Background ``N(xb, B0)``.
    observations : ObservationSet or iterable of Observation
    model : ModelInterface
    steps_per_interval : int
        Model steps between consecutive observation indices.
    n_intervals : int, optional
        Window length in intervals; defaults to the last observation index.
    """

    def __init__(self, prior, observations, model, steps_per_interval=1, n_intervals=None):
        if not isinstance(observations, ObservationSet):
            observations = ObservationSet(observations)
        if prior.dim != model.state_dimension:
            raise ContractError(f"prior dimension {prior.dim} != model dimension {model.state_dimension}")
        if not prior.cov.positive_definite:
            raise ContractError("background covariance is not positive definite")
        for o in observations:
            if o.operator.input_dim != model.state_dimension:
                raise ContractError(f"observation {o.index} operator input size mismatch")
        self.prior = prior
        self.observations = observations
        self.model = model
        self.steps_per_interval = int(steps_per_interval)
        if self.steps_per_interval < 1:
            raise ContractError("steps_per_interval must be >= 1")
        n = observations.last_index if n_intervals is None else int(n_intervals)
        if n < observations.last_index:
            raise ContractError("n_intervals shorter than the last observation index")
        self.n_intervals = n

    @property
    def dim(self):
        return self.model.state_dimension

    @property
    def xb(self):
        return self.prior.mean

    @property
    def B(self):
        return self.prior.cov

    def with_observations(self, observations):
        return AssimilationWindow(self.prior, observations, self.model,
                                  self.steps_per_interval, self.n_intervals)

    def interval_propagate(self, x):
        return self.model.propagate(x, self.steps_per_interval)

    def interval_adjoint(self, x, lam):
        return self.model.adjoint(x, lam, self.steps_per_interval)


# cost and gradient ----------------------------------------------------------

def forecast(win, x0):
    """Model states at every interval boundary, shape ``(n_intervals + 1, N)``."""
    x0 = as_state(x0, win.dim, name="x0")
    out = np.empty((win.n_intervals + 1, x0.size))
    out[0] = x0
    for k in range(win.n_intervals):
        out[k + 1] = win.interval_propagate(out[k])
    return out


def background_cost(win, x0):
    d = np.asarray(x0) - win.xb
    return 0.5 * float(d @ win.B.solve(d))


def observation_cost(win, states):
    """``0.5 * sum_k |y_k - H_k(x_k)|^2_{R_k^{-1}}`` over given boundary states."""
    return float(sum(o.cost(states[o.index]) for o in win.observations))


def cost(win, x0):
    """4D-Var cost of initial condition ``x0``."""
    states = forecast(win, x0)
    return background_cost(win, states[0]) + observation_cost(win, states)


def adjoint_sweep(win, x0, states=None):
    """Forward states and adjoint variables at every interval boundary.

    Returns ``(states, lambdas)`` where ``lambdas[k]`` is the adjoint
    variable at boundary ``k``; ``lambdas[0]`` enters the gradient.
    """
    if states is None:
        states = forecast(win, x0)
    lambdas = np.zeros_like(states)
    N = win.n_intervals
    o = win.observations.at(N)
    if o is not None:
        lambdas[N] = o.forcing(states[N])
    for k in range(N - 1, -1, -1):
        lam = win.interval_adjoint(states[k], lambdas[k + 1])
        o = win.observations.at(k)
        if o is not None:
            lam = lam + o.forcing(states[k])
        lambdas[k] = lam
    return states, lambdas


def gradient(win, x0):
    """Adjoint gradient ``B0^{-1}(x0 - xb) - lambda_0``."""
    return cost_and_gradient(win, x0)[1]


def cost_and_gradient(win, x0):
    states, lambdas = adjoint_sweep(win, x0)
    J = background_cost(win, states[0]) + observation_cost(win, states)
    g = win.B.solve(states[0] - win.xb) - lambdas[0]
    return J, g


# minimizer -------------------------------------------------------------------

@dataclass
class MinimizeResult:
    """Outcome of :func:`minimize`.

    Unpacks as ``x, trace = result``.  ``warnflag`` is nonzero when the
    optimizer stopped without meeting the gradient tolerance (line-search
    failure or iteration cap); ``x`` is then the best iterate seen.
    """

    x: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = False
    warnflag: int = 0
    message: str = ""
    n_iter: int = 0
    n_eval: int = 0

    def __iter__(self):
        return iter((self.x, self.trace))

    @property
    def cost(self):
        return self.trace[-1][1] if self.trace else float("nan")


def minimize(win, x_init, gtol=1e-6, max_iters=500, gtol_abs=0.0, fun=None, memory=20):
    """Minimize the 4D-Var cost with L-BFGS-B.

    Parameters
    ----------
    win : AssimilationWindow
    x_init : array_like
        Starting point.
    gtol : float
        Stop once ``|grad J| <= gtol * |grad J(x_init)|``.
    max_iters : int
        Iteration cap.
    gtol_abs : float
        Also stop once ``|grad J| <= gtol_abs``.
    fun : callable, optional
        Replacement ``x -> (J, grad)``; defaults to the full 4D-Var cost.
        Used to minimize the reduced cost with the same driver.
    memory : int
        L-BFGS history length.

    Returns
    -------
    MinimizeResult
        ``trace`` holds ``(iteration, J, |grad J|)`` tuples starting at
        iteration 0 for ``x_init``.
    """
    if fun is None:
        def fun(x):
            return cost_and_gradient(win, x)
    x_init = as_state(x_init, name="x_init")
    J0, g0 = fun(x_init)
    g0n = float(np.linalg.norm(g0))
    trace = [(0, float(J0), g0n)]
    best = {"x": x_init.copy(), "J": float(J0), "g": g0n}
    tol = max(gtol * g0n, gtol_abs)
    if g0n <= tol or g0n == 0.0:
        return MinimizeResult(x_init.copy(), trace, True, 0, "initial point satisfies tolerance", 0, 1)

    cache = {}
    n_eval = [1]

    def f(x):
        J, g = fun(x)
        n_eval[0] += 1
        J = float(J)
        cache["x"], cache["J"], cache["g"] = x.copy(), J, g
        if J < best["J"]:
            best.update(x=x.copy(), J=J, g=float(np.linalg.norm(g)))
        return J, g

    state = {"converged": False}

    def callback(intermediate_result):
        x = intermediate_result.x
        if "x" in cache and np.array_equal(cache["x"], x):
            J, g = cache["J"], cache["g"]
        else:
            J, g = f(x)
        gn = float(np.linalg.norm(g))
        trace.append((len(trace), float(J), gn))
        if gn <= tol:
            state["converged"] = True
            best.update(x=np.array(x, copy=True), J=float(J), g=gn)
            raise StopIteration

    res = _scipy_minimize(
        f, x_init, jac=True, method="L-BFGS-B", callback=callback,
        options=dict(maxiter=int(max_iters), maxcor=int(memory), gtol=0.0, ftol=0.0,
                     maxls=40),
    )
    converged = state["converged"]
    if converged:
        x, warn, msg = best["x"], 0, "gradient tolerance reached"
    else:
        x = best["x"]
        warn = 1 if res.nit >= max_iters else 2
        msg = str(res.message)
        if best["g"] <= tol:
            converged, warn = True, 0
    return MinimizeResult(np.array(x, copy=True), trace, converged, warn, msg,
                          len(trace) - 1, n_eval[0])
