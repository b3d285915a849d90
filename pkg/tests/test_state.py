import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rohmc.errors import ContractError, NotPositiveDefiniteError
from rohmc.state import (CovarianceOperator, GaussianDensity, RngStream, as_state, gaussian_sample,
                         log_density, weighted_norm_sq)

from conftest import random_spd


def test_as_state_rejects_wrong_shape_and_nan():
    with pytest.raises(ContractError):
        as_state(np.zeros(3), dim=4)
    with pytest.raises(ContractError):
        as_state([1.0, np.nan])
    assert as_state([1, 2]).dtype == np.float64


def test_weighted_norm_identity_is_euclidean():
    a, b = np.array([3.0, 4.0]), np.zeros(2)
    assert weighted_norm_sq(a, b, np.eye(2)) == pytest.approx(25.0)


def test_weighted_norm_diag():
    a = np.array([1.0, 2.0])
    C = CovarianceOperator.from_diagonal([2.0, 0.5])
    assert weighted_norm_sq(a, np.zeros(2), C) == pytest.approx(1 * 2 * 1 + 4 * 0.5)


def test_indefinite_matrix_rejected_on_solve():
    C = CovarianceOperator(np.diag([1.0, -1.0]))
    assert not C.positive_definite
    with pytest.raises(NotPositiveDefiniteError):
        C.solve(np.ones(2))


def test_dense_operations_match_numpy():
    rng = np.random.default_rng(3)
    A = random_spd(rng, 5)
    C = CovarianceOperator(A)
    x = rng.standard_normal(5)
    np.testing.assert_allclose(C.apply(x), A @ x, rtol=1e-12)
    np.testing.assert_allclose(C.solve(x), np.linalg.solve(A, x), rtol=1e-10)
    np.testing.assert_allclose(C.logdet(), np.linalg.slogdet(A)[1], rtol=1e-12)
    L = C.cholesky
    np.testing.assert_allclose(L @ L.T, A, atol=1e-12)
    np.testing.assert_allclose(C.sqrt_apply(x), L @ x, atol=1e-12)
    np.testing.assert_allclose(C.inverse().matrix, np.linalg.inv(A), rtol=1e-9, atol=1e-12)


def test_operator_matrix_is_read_only():
    C = CovarianceOperator(np.eye(2))
    with pytest.raises(ValueError):
        C.matrix[0, 0] = 3.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31 - 1), st.booleans())
def test_solve_inverts_apply(n, seed, diagonal):
    rng = np.random.default_rng(seed)
    if diagonal:
        C = CovarianceOperator.from_diagonal(rng.uniform(0.1, 5.0, n))
    else:
        C = CovarianceOperator(random_spd(rng, n, 50.0))
    x = rng.standard_normal(n)
    np.testing.assert_allclose(C.solve(C.apply(x)), x, rtol=1e-8, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_weighted_norm_nonnegative_and_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    C = CovarianceOperator(random_spd(rng, n))
    a, b = rng.standard_normal(n), rng.standard_normal(n)
    v = weighted_norm_sq(a, b, C.inverse())
    assert v >= 0
    assert v == pytest.approx(weighted_norm_sq(b, a, C.inverse()), rel=1e-12)


def test_rng_streams_are_reproducible_and_distinct():
    a = RngStream(5, 1).standard_normal(4)
    b = RngStream(5, 1).standard_normal(4)
    c = RngStream(5, 2).standard_normal(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_gaussian_sample_moments():
    rng = np.random.default_rng(0)
    A = random_spd(rng, 3)
    d = GaussianDensity(np.array([1.0, -2.0, 0.5]), CovarianceOperator(A))
    X = gaussian_sample(d, RngStream(1, 0), size=40000)
    np.testing.assert_allclose(X.mean(axis=0), d.mean, atol=0.05)
    np.testing.assert_allclose(np.cov(X, rowvar=False), A, rtol=0.05, atol=0.05)


def test_log_density_matches_scipy():
    from scipy.stats import multivariate_normal

    rng = np.random.default_rng(1)
    A = random_spd(rng, 4)
    m = rng.standard_normal(4)
    x = rng.standard_normal(4)
    d = GaussianDensity(m, CovarianceOperator(A))
    assert log_density(d, x) == pytest.approx(multivariate_normal(m, A).logpdf(x), rel=1e-12)
