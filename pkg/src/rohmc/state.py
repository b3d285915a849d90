"""Dense covariance operators, Gaussian densities and reproducible RNG streams.

State vectors are plain one-dimensional float64 numpy arrays throughout
the package; :func:`as_state` is the single validation point.

Norm convention: ``weighted_norm_sq(a, b, C) = (a - b)^T C (a - b)`` applies
``C`` directly.  Cost functions therefore pass *inverse* covariances
(precisions), never covariances.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ContractError, NotPositiveDefiniteError

__all__ = [
    "CovarianceOperator",
    "GaussianDensity",
    "RngStream",
    "as_state",
    "gaussian_sample",
    "log_density",
    "weighted_norm_sq",
]


def as_state(x, dim=None, name="state"):
    """Return ``x`` as a finite 1-D float64 array, optionally checking size."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ContractError(f"{name} must be a non-empty 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise ContractError(f"{name} has dimension {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains NaN or Inf")
    return arr


class CovarianceOperator:
    """Dense symmetric matrix with a cached Cholesky factor.

    The stored matrix is exactly symmetric (it is symmetrized on
    construction).  ``positive_definite`` records whether the Cholesky
    factorization succeeded; operations that need the factor raise
    :class:`NotPositiveDefiniteError` otherwise.

    Parameters
    ----------
    matrix : array_like, shape (n, n)
        Covariance (or precision) matrix.
    """

    def __init__(self, matrix):
        mat = np.array(matrix, dtype=np.float64, copy=True)
        if mat.ndim == 0:
            mat = mat.reshape(1, 1)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] == 0:
            raise ContractError(f"covariance must be a non-empty square matrix, got {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise ContractError("covariance contains NaN or Inf")
        mat = 0.5 * (mat + mat.T)
        mat.setflags(write=False)
        self._matrix = mat
        off = mat - np.diag(np.diag(mat))
        self._diag = np.diag(mat).copy() if not np.any(off) else None
        self._chol = None
        if self._diag is not None:
            self.positive_definite = bool(np.all(self._diag > 0))
            if self.positive_definite:
                self._chol = np.diag(np.sqrt(self._diag))
        else:
            try:
                self._chol = np.linalg.cholesky(mat)
                self.positive_definite = bool(np.all(np.diag(self._chol) > 0))
            except np.linalg.LinAlgError:
                self.positive_definite = False

    @classmethod
    def isotropic(cls, variance, dim):
        return cls(float(variance) * np.eye(dim))

    @classmethod
    def from_diagonal(cls, diag):
        return cls(np.diag(np.asarray(diag, dtype=np.float64)))

    @property
    def matrix(self):
        return self._matrix

    @property
    def dim(self):
        return self._matrix.shape[0]

    @property
    def is_diagonal(self):
        return self._diag is not None

    def diagonal(self):
        return np.diag(self._matrix).copy()

    def _require_pd(self):
        if not self.positive_definite:
            raise NotPositiveDefiniteError("covariance is not positive definite")

    @property
    def cholesky(self):
        """Lower-triangular factor ``L`` with ``L @ L.T == matrix``."""
        self._require_pd()
        return self._chol

    def apply(self, x):
        """``C @ x`` for a vector or a matrix of column vectors."""
        x = np.asarray(x, dtype=np.float64)
        if self._diag is not None:
            return self._diag * x if x.ndim == 1 else self._diag[:, None] * x
        return self._matrix @ x

    def solve(self, x):
        """``C^{-1} @ x`` via the cached factorization."""
        self._require_pd()
        x = np.asarray(x, dtype=np.float64)
        if self._diag is not None:
            return x / self._diag if x.ndim == 1 else x / self._diag[:, None]
        return sla.cho_solve((self._chol, True), x)

    inverse_apply = solve

    def sqrt_apply(self, z):
        """``L @ z`` where ``L`` is the Cholesky factor."""
        self._require_pd()
        z = np.asarray(z, dtype=np.float64)
        if self._diag is not None:
            s = np.sqrt(self._diag)
            return s * z if z.ndim == 1 else s[:, None] * z
        return self._chol @ z

    def inverse(self):
        """Dense inverse as a new operator."""
        self._require_pd()
        if self._diag is not None:
            return CovarianceOperator(np.diag(1.0 / self._diag))
        return CovarianceOperator(self.solve(np.eye(self.dim)))

    def logdet(self):
        """``ln |det C|`` from the Cholesky factor."""
        self._require_pd()
        if self._diag is not None:
            return float(np.sum(np.log(self._diag)))
        return float(2.0 * np.sum(np.log(np.diag(self._chol))))

    def __repr__(self):
        kind = "diagonal" if self.is_diagonal else "dense"
        return f"CovarianceOperator(dim={self.dim}, {kind}, pd={self.positive_definite})"


def _as_matrix_operator(C):
    if isinstance(C, CovarianceOperator):
        return C.apply, C.dim
    mat = np.atleast_2d(np.asarray(C, dtype=np.float64))
    return (lambda v: mat @ v), mat.shape[0]


def weighted_norm_sq(a, b, C):
    """``(a - b)^T C (a - b)``.

    ``C`` is applied as given: pass a precision matrix to get the
    Mahalanobis distance.  ``C`` may be an array or a
    :class:`CovarianceOperator`.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    apply, n = _as_matrix_operator(C)
    if a.ndim != 1 or a.shape != b.shape or a.size != n:
        raise ContractError(f"dimension mismatch: a{a.shape}, b{b.shape}, C({n}x{n})")
    d = a - b
    return float(d @ apply(d))


@dataclass(frozen=True)
class GaussianDensity:
    """Gaussian ``N(mean, cov)``."""

    mean: np.ndarray
    cov: CovarianceOperator

    def __post_init__(self):
        mean = as_state(self.mean, name="mean")
        if not isinstance(self.cov, CovarianceOperator):
            object.__setattr__(self, "cov", CovarianceOperator(self.cov))
        if mean.size != self.cov.dim:
            raise ContractError(f"mean dimension {mean.size} != covariance dimension {self.cov.dim}")
        mean = mean.copy()
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self):
        return self.mean.size


@dataclass
class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    Backed by numpy's counter-based Philox bit generator; the seed
    sequence is ``SeedSequence(seed, spawn_key=(stream_id,))`` so distinct
    stream ids give statistically independent streams.
    """

    seed: int
    stream_id: int = 0
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed)
        self.stream_id = int(self.stream_id)
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must be a 64-bit unsigned integer")
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def uniform(self, size=None):
        return self.generator.random(size)

    def spawn(self, stream_id):
        """New independent stream with the same seed."""
        return RngStream(self.seed, stream_id)


def gaussian_sample(d, rng, size=None):
    """Draw ``mean + L z`` with ``z`` standard normal from ``rng``.

    With ``size`` given, returns an array of shape ``(size, dim)``.
    """
    if size is None:
        z = rng.standard_normal(d.dim)
        return d.mean + d.cov.sqrt_apply(z)
    z = rng.standard_normal((d.dim, int(size)))
    return (d.mean[:, None] + d.cov.sqrt_apply(z)).T


def log_density(d, x):
    """Log of the Gaussian pdf at ``x``."""
    x = as_state(x, d.dim, name="x")
    r = x - d.mean
    quad = float(r @ d.cov.solve(r))
    return -0.5 * d.dim * np.log(2.0 * np.pi) - 0.5 * d.cov.logdet() - 0.5 * quad
