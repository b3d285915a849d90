"""Hybrid Monte Carlo sampling smoother.

The sampler targets ``exp(-J(x))`` for a potential ``J`` supplied by a
backend: the full 4D-Var cost, the reduced-space cost, or the full-space
cost with reduced-order dynamics in the observation terms.  Proposals
come from position-Verlet trajectories with a Gaussian momentum that is
redrawn for every proposal.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import (ContractError, ModelDivergenceError, NonPhysicalStateError,
                     SamplerAbort)
from .fourdvar import cost as full_cost
from .fourdvar import cost_and_gradient as full_cost_and_gradient
from .io import write_array
from .rom import ApproxFullCost, ReducedCost, refresh_basis
from .state import CovarianceOperator, RngStream, as_state

__all__ = [
    "ApproxFullBackend",
    "BasisPolicy",
    "ChainResult",
    "FullBackend",
    "FunctionBackend",
    "HmcConfig",
    "MassMatrix",
    "PotentialBackend",
    "ProposalResult",
    "ReducedBackend",
    "TuneResult",
    "acceptance_probability",
    "check_gradient",
    "hamiltonian",
    "make_backend",
    "propose_and_accept",
    "run_smoother",
    "save_ensemble",
    "tune_step_size",
    "verlet_trajectory",
]

# failures inside a trajectory that turn a proposal into a rejection
_TRAJECTORY_ERRORS = (ModelDivergenceError, NonPhysicalStateError, ContractError,
                      FloatingPointError, OverflowError, np.linalg.LinAlgError)


# mass matrix ---------------------------------------------------------------

class MassMatrix:
    """Symmetric positive-definite HMC mass matrix.

    Parameters
    ----------
    matrix : array_like or CovarianceOperator
        Either a 1-D positive diagonal or a dense SPD matrix.
    """

    def __init__(self, matrix):
        if isinstance(matrix, CovarianceOperator):
            op = matrix
        else:
            m = np.asarray(matrix, dtype=np.float64)
            op = CovarianceOperator(np.diag(m) if m.ndim == 1 else m)
        if not op.positive_definite or np.any(op.diagonal() <= 0):
            raise ContractError("mass matrix must be positive definite")
        self._op = op

    @classmethod
    def identity(cls, dim):
        return cls(np.ones(int(dim)))

    @property
    def dim(self):
        return self._op.dim

    @property
    def diagonal(self):
        return self._op.diagonal()

    @property
    def matrix(self):
        return self._op.matrix

    def apply(self, p):
        return self._op.apply(p)

    def inverse_apply(self, p):
        return self._op.solve(p)

    def sample(self, rng):
        """Momentum draw ``p ~ N(0, M)``."""
        return self._op.sqrt_apply(rng.standard_normal(self.dim))

    def kinetic(self, p):
        return 0.5 * float(p @ self._op.solve(p))


# backends ------------------------------------------------------------------

class PotentialBackend:
    """Potential energy on the sampling space plus maps to full space."""

    tag = "abstract"
    basis = None

    @property
    def dim(self):
        raise NotImplementedError

    def potential(self, x):
        raise NotImplementedError

    def gradient(self, x):
        return self.potential_and_gradient(x)[1]

    def potential_and_gradient(self, x):
        return self.potential(x), self.gradient(x)

    def lift(self, x):
        """Sampling-space point to full state."""
        return np.asarray(x, dtype=np.float64)

    def restrict(self, x_full):
        """Full state to sampling-space point."""
        return np.asarray(x_full, dtype=np.float64)

    def default_mass(self):
        return MassMatrix.identity(self.dim)

    def with_basis(self, basis, verify=False):
        raise ContractError(f"backend {self.tag!r} has no reduced basis")

    @property
    def basis_id(self):
        return None if self.basis is None else self.basis.basis_id


class FunctionBackend(PotentialBackend):
    """Backend from plain callables; used for analytic test targets."""

    def __init__(self, potential, gradient, dim, tag="function"):
        self._J = potential
        self._g = gradient
        self._dim = int(dim)
        self.tag = tag

    @property
    def dim(self):
        return self._dim

    def potential(self, x):
        return float(self._J(x))

    def gradient(self, x):
        return np.asarray(self._g(x), dtype=np.float64)


def _inverse_diagonal(op):
    if op.is_diagonal:
        return 1.0 / op.diagonal()
    return np.diag(op.solve(np.eye(op.dim))).copy()


def check_gradient(backend, x, direction, eps=1e-5):
    """Relative error between ``grad . d`` and a central difference of the potential."""
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    fd = (backend.potential(x + eps * d) - backend.potential(x - eps * d)) / (2.0 * eps)
    an = float(backend.gradient(x) @ d)
    scale = max(abs(fd), abs(an), 1e-300)
    return abs(fd - an) / scale


class _WindowBackend(PotentialBackend):
    _verify_tol = 1e-4

    def _verify(self, x_full, seed=12345):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(self.win.dim)
        x = self.restrict(x_full + 0.1 * self.win.B.sqrt_apply(z))
        d = self.restrict(self.win.B.sqrt_apply(rng.standard_normal(self.win.dim)))
        if not np.any(d):
            return 0.0
        err = check_gradient(self, x, d / np.linalg.norm(d) * math.sqrt(self.dim))
        if not err < self._verify_tol:
            raise ContractError(f"{self.tag} backend gradient failed finite-difference check "
                                f"(relative error {err:.2e})")
        self.verify_error = err
        return err


class FullBackend(_WindowBackend):
    """Potential = full 4D-Var cost."""

    tag = "full"

    def __init__(self, win, verify=True):
        self.win = win
        self.verify_error = None
        if verify:
            self._verify(win.xb)

    @property
    def dim(self):
        return self.win.dim

    def potential(self, x):
        return full_cost(self.win, x)

    def potential_and_gradient(self, x):
        return full_cost_and_gradient(self.win, x)

    def gradient(self, x):
        return full_cost_and_gradient(self.win, x)[1]

    def default_mass(self):
        return MassMatrix(_inverse_diagonal(self.win.B))


class ReducedBackend(_WindowBackend):
    """Potential = reduced-space cost; samples live in basis coefficients."""

    tag = "reduced"

    def __init__(self, win, basis, verify=True):
        self.win = win
        self.basis = basis
        self._cost = ReducedCost(win, basis)
        self.verify_error = None
        if verify:
            self._verify(win.xb)

    @property
    def dim(self):
        return self.basis.n_red

    def potential(self, x):
        return self._cost.cost(x)

    def potential_and_gradient(self, x):
        return self._cost.cost_and_gradient(x)

    def gradient(self, x):
        return self._cost.cost_and_gradient(x)[1]

    def lift(self, x):
        return self.basis.lift(x)

    def restrict(self, x_full):
        return self.basis.restrict(x_full)

    def default_mass(self):
        return MassMatrix(_inverse_diagonal(self._cost.B_red))

    def with_basis(self, basis, verify=False):
        return ReducedBackend(self.win, basis, verify=verify)


class ApproxFullBackend(_WindowBackend):
    """Full-space potential with observation terms through the reduced dynamics."""

    tag = "approx_full"

    def __init__(self, win, basis, verify=True):
        self.win = win
        self.basis = basis
        self._cost = ApproxFullCost(win, basis)
        self.verify_error = None
        if verify:
            self._verify(win.xb)

    @property
    def dim(self):
        return self.win.dim

    def potential(self, x):
        return self._cost.cost(x)

    def potential_and_gradient(self, x):
        return self._cost.cost_and_gradient(x)

    def gradient(self, x):
        return self._cost.cost_and_gradient(x)[1]

    def default_mass(self):
        return MassMatrix(_inverse_diagonal(self.win.B))

    def with_basis(self, basis, verify=False):
        return ApproxFullBackend(self.win, basis, verify=verify)


def make_backend(kind, win, basis=None, verify=True):
    """Backend by tag: ``full``, ``reduced`` or ``approx_full``."""
    if kind == "full":
        return FullBackend(win, verify=verify)
    if basis is None:
        raise ContractError(f"backend {kind!r} needs a basis")
    if kind == "reduced":
        return ReducedBackend(win, basis, verify=verify)
    if kind in ("approx_full", "approx"):
        return ApproxFullBackend(win, basis, verify=verify)
    raise ContractError(f"unknown backend {kind!r}")


# configuration and results -----------------------------------------------------

@dataclass(frozen=True)
class HmcConfig:
    """Sampler settings.

    ``mixing_steps`` thins the chain: a sample is kept on every
    ``mixing_steps``-th accepted proposal after burn-in.  ``burn_in``
    counts proposals.  ``max_proposals`` bounds the sampling phase;
    ``None`` means ``100 * ensemble_size * mixing_steps``.
    """

    step_size: float = 0.01
    n_steps: int = 10
    burn_in: int = 25
    mixing_steps: int = 5
    ensemble_size: int = 100
    seed: int = 0
    stream_id: int = 0
    max_proposals: int = None

    def __post_init__(self):
        if not (self.step_size > 0 and math.isfinite(self.step_size)):
            raise ContractError("step_size must be positive")
        if self.n_steps < 1:
            raise ContractError("n_steps must be >= 1")
        if self.burn_in < 0 or self.mixing_steps < 1 or self.ensemble_size < 1:
            raise ContractError("burn_in >= 0, mixing_steps >= 1 and ensemble_size >= 1 required")

    @property
    def trajectory_length(self):
        return self.step_size * self.n_steps

    @property
    def proposal_limit(self):
        if self.max_proposals is not None:
            return int(self.max_proposals)
        return 100 * self.ensemble_size * self.mixing_steps

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return HmcConfig(**d)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BasisPolicy:
    """When to rebuild the reduced basis during a chain.

    ``refresh_every`` counts sampling-phase proposals; 0 disables it.
    """

    refresh_at_start: bool = False
    refresh_after_burn_in: bool = True
    refresh_every: int = 0
    gamma: float = 0.99
    normalize_adjoint: bool = True

    def to_dict(self):
        return asdict(self)


@dataclass
class ChainResult:
    """Record of one chain.

    ``samples`` are in the backend's sampling space; ``ensemble`` holds
    the same samples lifted to full space with the basis that was active
    when each was drawn.
    """

    samples: list
    ensemble: np.ndarray
    accept_log: list
    seed: int
    stream_id: int
    backend: str
    basis_ids: list
    potentials: list
    refresh_log: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    final_basis: object = None

    @property
    def n_proposals(self):
        return len(self.accept_log)

    @property
    def n_accepted(self):
        return sum(1 for r in self.accept_log if r["accepted"])

    @property
    def acceptance_rate(self):
        return self.n_accepted / self.n_proposals if self.accept_log else 0.0

    @property
    def rejection_rate(self):
        return 1.0 - self.acceptance_rate

    @property
    def delta_h(self):
        return np.array([r["delta_h"] for r in self.accept_log])

    def summary(self):
        dh = self.delta_h
        finite = dh[np.isfinite(dh)]
        return {
            "backend": self.backend,
            "seed": self.seed,
            "stream_id": self.stream_id,
            "n_samples": len(self.samples),
            "n_proposals": self.n_proposals,
            "n_accepted": self.n_accepted,
            "acceptance_rate": self.acceptance_rate,
            "delta_h_mean": float(finite.mean()) if finite.size else None,
            "delta_h_max": float(finite.max()) if finite.size else None,
            "n_failed": sum(1 for r in self.accept_log if r["reason"]),
            "basis_ids": sorted(set(b for b in self.basis_ids if b)),
            "refreshes": self.refresh_log,
        }


@dataclass
class ProposalResult:
    """Outcome of one Metropolis step; unpacks as ``(x, accepted, delta_h)``."""

    x: np.ndarray
    accepted: bool
    delta_h: float
    potential: float
    probability: float
    reason: str = ""

    def __iter__(self):
        return iter((self.x, self.accepted, self.delta_h))


# core operations -------------------------------------------------------------

def hamiltonian(backend, mass, p, x):
    """``0.5 p^T M^{-1} p + J(x)``."""
    p = as_state(p, backend.dim, name="p")
    x = as_state(x, backend.dim, name="x")
    return mass.kinetic(p) + backend.potential(x)


def acceptance_probability(delta_h):
    """``min(1, exp(-delta_h))``; non-finite energy changes give 0."""
    if not math.isfinite(delta_h):
        return 0.0
    return 1.0 if delta_h <= 0.0 else math.exp(-delta_h)


def verlet_trajectory(backend, mass, p0, x0, h, m):
    """``m`` position-Verlet steps of size ``h``; returns ``(p, x)``.

    Each step drifts half a step with ``M^{-1} p``, kicks with
    ``-h grad J`` at the midpoint and drifts another half step.
    """
    p = np.array(p0, dtype=np.float64, copy=True)
    x = np.array(x0, dtype=np.float64, copy=True)
    half = 0.5 * h
    for _ in range(int(m)):
        x = x + half * mass.inverse_apply(p)
        g = backend.gradient(x)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite potential gradient")
        p = p - h * g
        x = x + half * mass.inverse_apply(p)
    return p, x


def propose_and_accept(backend, mass, x_curr, cfg, rng, potential_curr=None):
    """One HMC proposal with Metropolis acceptance.

    Draws ``p ~ N(0, M)``, integrates, and accepts iff
    ``min(1, exp(-dH)) > u`` with ``u ~ U(0, 1)``.  The uniform is drawn
    even for failed trajectories so the random stream stays aligned.
    """
    if potential_curr is None:
        potential_curr = backend.potential(x_curr)
    p0 = mass.sample(rng)
    h0 = mass.kinetic(p0) + potential_curr
    reason = ""
    try:
        p1, x1 = verlet_trajectory(backend, mass, p0, x_curr, cfg.step_size, cfg.n_steps)
        J1 = backend.potential(x1)
        if not math.isfinite(J1):
            raise FloatingPointError("non-finite potential")
        dH = mass.kinetic(p1) + J1 - h0
    except _TRAJECTORY_ERRORS as exc:
        x1, J1, dH = x_curr, potential_curr, math.inf
        reason = f"{type(exc).__name__}: {exc}"
    a = acceptance_probability(dH)
    u = float(rng.uniform())
    if a > u:
        return ProposalResult(x1, True, dH, J1, a, reason)
    return ProposalResult(x_curr, False, dH, potential_curr, a, reason)


def _abort_diagnostics(log):
    dh = np.array([r["delta_h"] for r in log])
    fin = dh[np.isfinite(dh)]
    out = {"n_proposals": len(log), "n_failed": int(np.sum(~np.isfinite(dh)))}
    if fin.size:
        out.update(delta_h_min=float(fin.min()), delta_h_median=float(np.median(fin)),
                   delta_h_mean=float(fin.mean()), delta_h_max=float(fin.max()))
    out["hint"] = "reduce the step size or trajectory length"
    return out


def run_smoother(backend, win, cfg, basis_policy=None, x_init=None, mass=None, rng=None,
                 progress=None):
    """Run one HMC chain and collect ``cfg.ensemble_size`` thinned samples.

    Parameters
    ----------
    backend : PotentialBackend
    win : AssimilationWindow or None
        Needed for basis refreshes and for the default start ``xb``.
    cfg : HmcConfig
    basis_policy : BasisPolicy, optional
        Refresh schedule for backends with a basis.  ``None`` never refreshes.
    x_init : array_like, optional
        Full-space starting state, typically the 4D-Var analysis.
    mass : MassMatrix, optional
        Defaults to the backend's choice and is rebuilt after a refresh.
    rng : RngStream, optional
        Defaults to ``RngStream(cfg.seed, cfg.stream_id)``.
    progress : callable, optional
        Called as ``progress(n_proposals, n_samples)`` after each proposal.

    Returns
    -------
    ChainResult

    Raises
    ------
    SamplerAbort
        No proposal accepted during a non-empty burn-in, or the proposal
        limit reached before the ensemble is complete.
    """
    if rng is None:
        rng = RngStream(cfg.seed, cfg.stream_id)
    if x_init is None:
        if win is None:
            raise ContractError("x_init is required without a window")
        x_init = win.xb
    x_full = np.asarray(x_init, dtype=np.float64)
    default_mass = mass is None
    policy = basis_policy
    refresh_log = []

    def refresh(be, x, stage, n_prop):
        full = be.lift(x)
        nb = refresh_basis(full, win, policy.gamma, normalize_adjoint=policy.normalize_adjoint,
                           label=stage)
        be2 = be.with_basis(nb, verify=True)
        refresh_log.append({"proposal": n_prop, "stage": stage, "basis_id": nb.basis_id,
                            "n_red": nb.n_red, "fd_error": be2.verify_error})
        return be2, be2.restrict(full)

    can_refresh = policy is not None and backend.basis is not None and win is not None
    if can_refresh and policy.refresh_at_start:
        backend, x = refresh(backend, backend.restrict(x_full), "start", 0)
    else:
        x = backend.restrict(x_full)
    if default_mass:
        mass = backend.default_mass()
    J = backend.potential(x)

    log = []
    samples, ensemble, basis_ids, potentials = [], [], [], []

    def step():
        nonlocal x, J
        res = propose_and_accept(backend, mass, x, cfg, rng, J)
        log.append({"delta_h": float(res.delta_h), "accepted": bool(res.accepted),
                    "probability": float(res.probability), "reason": res.reason})
        x, J = res.x, res.potential
        if progress is not None:
            progress(len(log), len(samples))
        return res.accepted

    for _ in range(cfg.burn_in):
        step()
    if cfg.burn_in and not any(r["accepted"] for r in log):
        raise SamplerAbort("no proposal accepted during burn-in", _abort_diagnostics(log))

    if can_refresh and policy.refresh_after_burn_in:
        backend, x = refresh(backend, x, "burn_in", len(log))
        if default_mass:
            mass = backend.default_mass()
        J = backend.potential(x)

    n_sampling, n_acc = 0, 0
    limit = cfg.proposal_limit
    while len(samples) < cfg.ensemble_size:
        if n_sampling >= limit:
            raise SamplerAbort(f"proposal limit {limit} reached with {len(samples)} samples",
                               _abort_diagnostics(log))
        if can_refresh and policy.refresh_every and n_sampling and n_sampling % policy.refresh_every == 0:
            backend, x = refresh(backend, x, "periodic", len(log))
            if default_mass:
                mass = backend.default_mass()
            J = backend.potential(x)
        accepted = step()
        n_sampling += 1
        if accepted:
            n_acc += 1
            if n_acc % cfg.mixing_steps == 0:
                samples.append(np.array(x, copy=True))
                ensemble.append(backend.lift(x))
                basis_ids.append(backend.basis_id)
                potentials.append(float(J))

    return ChainResult(
        samples=samples,
        ensemble=np.array(ensemble),
        accept_log=log,
        seed=int(rng.seed),
        stream_id=int(rng.stream_id),
        backend=backend.tag,
        basis_ids=basis_ids,
        potentials=potentials,
        refresh_log=refresh_log,
        config=cfg.to_dict(),
        final_basis=backend.basis,
    )


@dataclass
class TuneResult:
    step_size: float
    table: list

    def to_dict(self):
        return {"step_size": self.step_size, "table": self.table}


def tune_step_size(backend, mass, x0, cfg, rng, candidates=None, n_trials=20,
                   target=(0.25, 0.30)):
    """Pick a step size whose rejection rate falls in ``target``.

    Each candidate runs ``n_trials`` proposals from ``x0`` with the
    trajectory step count held fixed.  The first candidate inside the band
    wins; otherwise the one closest to its midpoint.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if candidates is None:
        candidates = cfg.step_size * np.array([0.25, 0.5, 1.0, 2.0, 4.0])
    table = []
    for h in candidates:
        c = cfg.replace(step_size=float(h))
        x, J = x0, backend.potential(x0)
        rej = 0
        for _ in range(int(n_trials)):
            res = propose_and_accept(backend, mass, x, c, rng, J)
            rej += not res.accepted
            x, J = res.x, res.potential
        table.append({"step_size": float(h), "rejection_rate": rej / n_trials})
    lo, hi = target
    inside = [r for r in table if lo <= r["rejection_rate"] <= hi]
    if inside:
        best = inside[0]
    else:
        mid = 0.5 * (lo + hi)
        best = min(table, key=lambda r: abs(r["rejection_rate"] - mid))
    return TuneResult(best["step_size"], table)


def save_ensemble(result, path, extra=None):
    """Write the full-space ensemble (row-major) with a JSON sidecar."""
    meta = {
        "backend": result.backend,
        "seed": result.seed,
        "stream_id": result.stream_id,
        "acceptance_rate": result.acceptance_rate,
        "config": result.config,
        "basis_ids": result.basis_ids,
        "refreshes": result.refresh_log,
    }
    if extra:
        meta.update(extra)
    return write_array(path, result.ensemble, order="C", meta=meta)
