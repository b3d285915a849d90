"""Closed-form Gaussian posteriors, projection identities and ensemble tests."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ContractError, DegenerateInputError, UnsupportedVariantError
from .fourdvar import forecast
from .fourdvar import observation_cost as full_observation_cost
from .rom import ApproxFullCost
from .state import CovarianceOperator, as_state

__all__ = [
    "CovTestReport",
    "PosteriorMoments",
    "approx_posterior_moments",
    "ensemble_moments",
    "kl_corollary_estimate",
    "kl_projected_terms",
    "kl_projected_vs_full",
    "likelihood_ratio_relation",
    "linear_posterior_moments",
    "log_likelihood_ratio",
    "projected_pdf_quadform_check",
    "pseudo_inverse",
    "reduced_posterior_moments",
    "rmse_series",
    "schott_statistic",
]

PINV_CUTOFF = 1e-12


@dataclass(frozen=True)
class PosteriorMoments:
    """Mean and covariance of a Gaussian (or empirical) posterior.

    ``variant`` is one of ``full``, ``approx_rom``, ``reduced`` or
    ``ensemble``.  Reduced moments are in basis coefficients.
    """

    mean: np.ndarray
    cov: np.ndarray
    variant: str = "full"

    @property
    def dim(self):
        return self.mean.size

    def operator(self):
        return CovarianceOperator(self.cov)


def _sym(a):
    return 0.5 * (a + a.T)


def _require_linear(win):
    if not getattr(win.model, "is_linear", False):
        raise UnsupportedVariantError("closed-form moments need a linear model")
    for o in win.observations:
        if not o.operator.is_linear:
            raise UnsupportedVariantError(f"observation {o.index} operator is nonlinear")


def _gaussian_from_information(prec, info, variant):
    op = CovarianceOperator(prec)
    if not op.positive_definite:
        raise ContractError("posterior precision is not positive definite")
    cov = _sym(op.solve(np.eye(op.dim)))
    mean = op.solve(info)
    return PosteriorMoments(mean, cov, variant)


def _moments_with_propagator(win, step, B_inv, B_inv_xb, variant, obs_map=None):
    """Accumulate precision and information with ``G_k = step^k``."""
    n = step.shape[0]
    prec = B_inv.copy()
    info = B_inv_xb.copy()
    G = np.eye(n)
    for k in range(win.n_intervals + 1):
        o = win.observations.at(k)
        if o is not None:
            H = o.operator.matrix()
            if obs_map is not None:
                H = H @ obs_map
            HG = H @ G
            Rinv_HG = o.R.solve(HG)
            prec += HG.T @ Rinv_HG
            info += HG.T @ o.R.solve(o.y)
        G = step @ G
    return _gaussian_from_information(_sym(prec), info, variant)


def linear_posterior_moments(win):
    """Exact posterior of a linear-Gaussian window."""
    _require_linear(win)
    Mi = win.model.interval_matrix(win.steps_per_interval)
    B_inv = _sym(win.B.solve(np.eye(win.dim)))
    return _moments_with_propagator(win, Mi, B_inv, win.B.solve(win.xb), "full")


def approx_posterior_moments(win, basis):
    """Posterior whose observation terms follow ``(P M P)^k``."""
    _require_linear(win)
    P = basis.projector
    Mi = win.model.interval_matrix(win.steps_per_interval)
    B_inv = _sym(win.B.solve(np.eye(win.dim)))
    return _moments_with_propagator(win, P @ Mi @ P, B_inv, win.B.solve(win.xb), "approx_rom")


def reduced_posterior_moments(win, basis):
    """Posterior of the reduced-space cost, in basis coefficients."""
    _require_linear(win)
    V = basis.V
    Mr = V.T @ win.model.interval_matrix(win.steps_per_interval) @ V
    Bt = CovarianceOperator(V.T @ win.B.apply(V))
    Bt_inv = _sym(Bt.solve(np.eye(basis.n_red)))
    return _moments_with_propagator(win, Mr, Bt_inv, Bt.solve(V.T @ win.xb), "reduced",
                                    obs_map=V)


# projection identities ------------------------------------------------------------

def _eig_nonzero(S, cutoff=PINV_CUTOFF):
    w, U = np.linalg.eigh(_sym(S))
    keep = w > cutoff * max(float(w.max()), 0.0)
    return w[keep], U[:, keep]


def pseudo_inverse(S, cutoff=PINV_CUTOFF):
    """Spectral pseudo-inverse keeping eigenvalues above ``cutoff * lambda_max``."""
    w, U = _eig_nonzero(S, cutoff)
    return (U / w) @ U.T


def projected_pdf_quadform_check(A0, V, x0, x0a):
    """Both sides of the projected-density quadratic-form identity.

    Returns ``(lhs, rhs)`` with ``lhs = |P x0 - P xa|^2`` in the
    pseudo-inverse of ``P A0 P`` and ``rhs = |V^T x0 - V^T xa|^2`` in the
    inverse of ``V^T A0 V``.
    """
    A0 = np.asarray(A0, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    P = V @ V.T
    d = P @ (np.asarray(x0) - np.asarray(x0a))
    lhs = float(d @ pseudo_inverse(P @ A0 @ P) @ d)
    dr = V.T @ (np.asarray(x0) - np.asarray(x0a))
    rhs = float(dr @ np.linalg.solve(V.T @ A0 @ V, dr))
    return lhs, rhs


def kl_projected_terms(A0, x0a, V):
    """The four summands of the projected-versus-full KL divergence."""
    A0 = _sym(np.asarray(A0, dtype=np.float64))
    V = np.asarray(V, dtype=np.float64)
    n, r = V.shape
    P = V @ V.T
    Ab = P @ A0 @ P
    w, U = _eig_nonzero(Ab)
    Ab_pinv = (U / w) @ U.T
    A_op = CovarianceOperator(A0)
    A_inv = A_op.solve(np.eye(n))
    dx = P @ x0a - x0a
    return {
        "dimension": (n - r) * math.log(2.0 * math.pi),
        "log_det": A_op.logdet() - float(np.sum(np.log(w))),
        "mean_shift": float(dx @ A_inv @ dx),
        "trace": float(np.trace((A_inv - Ab_pinv) @ Ab)),
    }


def kl_projected_vs_full(A0, x0a, V):
    """KL divergence of the projected posterior from the full posterior."""
    return 0.5 * sum(kl_projected_terms(A0, x0a, V).values())


def log_likelihood_ratio(win, basis, x0):
    """``J_obs(x0) - J_obs_approx(x0)``: log of approximate over full likelihood."""
    x0 = as_state(x0, win.dim, name="x0")
    full = full_observation_cost(win, forecast(win, x0))
    approx = ApproxFullCost(win, basis).observation_cost(x0)
    return full - approx


def likelihood_ratio_relation(win, basis, x0):
    """Ratio of the approximate posterior to the full posterior at ``x0``."""
    return math.exp(log_likelihood_ratio(win, basis, x0))


def kl_corollary_estimate(win, basis, samples):
    """Sample mean of ``J_obs - J_obs_approx`` over draws from the approximate posterior."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 1:
        raise ContractError("need at least one sample")
    return float(np.mean([log_likelihood_ratio(win, basis, x) for x in samples]))


# ensembles ------------------------------------------------------------------------

def ensemble_moments(samples):
    """Sample mean and unbiased sample covariance of row samples."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ContractError("need at least two samples as rows of a 2-D array")
    mean = X.mean(axis=0)
    D = X - mean
    cov = _sym(D.T @ D / (X.shape[0] - 1))
    return PosteriorMoments(mean, cov, "ensemble")


def rmse_series(analysis_x0, truth_x0, model, n_intervals, steps_per_interval=1):
    """RMSE between two trajectories at every observation boundary."""
    a = as_state(analysis_x0, model.state_dimension, name="analysis_x0")
    t = as_state(truth_x0, model.state_dimension, name="truth_x0")
    out = np.empty(int(n_intervals) + 1)
    for k in range(out.size):
        out[k] = np.linalg.norm(a - t) / math.sqrt(a.size)
        if k + 1 < out.size:
            a = model.propagate(a, steps_per_interval)
            t = model.propagate(t, steps_per_interval)
    return out


@dataclass(frozen=True)
class CovTestReport:
    """Two-sample covariance equality test outcome."""

    t_mn: float
    theta: float
    t_star: float
    n1: int
    n2: int
    alpha: float
    z_crit: float
    reject: bool
    form: str

    def to_dict(self):
        return dict(t_mn=self.t_mn, theta=self.theta, t_star=self.t_star, n1=self.n1,
                    n2=self.n2, alpha=self.alpha, z_crit=self.z_crit, reject=self.reject,
                    form=self.form)


def schott_statistic(S1, S2, n1, n2, alpha=0.01, form="printed"):
    """High-dimensional test of ``Sigma_1 = Sigma_2`` from sample covariances.

    Parameters
    ----------
    S1, S2 : array_like, shape (p, p)
        Sample covariances.
    n1, n2 : int
        Ensemble sizes, at least 3.
    alpha : float
        Two-sided significance level.
    form : {"printed", "bias_corrected"}
        ``printed`` uses ``1 - (n_i - 2)/eta_i * tr(S_i^2)`` for the squared
        terms; ``bias_corrected`` uses ``(1 - (n_i - 2)/eta_i) * tr(S_i^2)``.

    Returns
    -------
    CovTestReport
    """
    S1 = np.asarray(S1, dtype=np.float64)
    S2 = np.asarray(S2, dtype=np.float64)
    if S1.ndim != 2 or S1.shape[0] != S1.shape[1] or S1.shape != S2.shape:
        raise ContractError(f"covariances must be square and equal-sized, got {S1.shape}, {S2.shape}")
    n1, n2 = int(n1), int(n2)
    if n1 < 3 or n2 < 3:
        raise ContractError("ensemble sizes must be at least 3")
    if form not in ("printed", "bias_corrected"):
        raise ContractError(f"unknown form {form!r}")
    eta1 = (n1 + 2) * (n1 - 1)
    eta2 = (n2 + 2) * (n2 - 1)
    tr11 = float(np.sum(S1 * S1.T))
    tr22 = float(np.sum(S2 * S2.T))
    tr12 = float(np.sum(S1 * S2.T))
    t1, t2 = float(np.trace(S1)), float(np.trace(S2))
    if form == "printed":
        sq = (1.0 - (n1 - 2) / eta1 * tr11) + (1.0 - (n2 - 2) / eta2 * tr22)
    else:
        sq = (1.0 - (n1 - 2) / eta1) * tr11 + (1.0 - (n2 - 2) / eta2) * tr22
    t_mn = sq - 2.0 * tr12 - n1 / eta1 * t1 ** 2 - n2 / eta2 * t2 ** 2
    n = n1 + n2
    S = (n1 / n) * S1 + (n2 / n) * S2
    a = n ** 2 / ((n + 2) * (n - 1)) * (float(np.sum(S * S.T)) - float(np.trace(S)) ** 2 / n)
    theta = math.sqrt(4.0 * a ** 2 * ((n1 + n2) / (n1 * n2)) ** 2)
    if theta == 0.0 or not math.isfinite(theta):
        raise DegenerateInputError("test scale is zero; covariances are degenerate")
    t_star = t_mn / theta
    z = float(norm.ppf(1.0 - alpha / 2.0))
    return CovTestReport(t_mn, theta, t_star, n1, n2, float(alpha), z, abs(t_star) > z, form)
