import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rohmc.errors import ContractError, ModelDivergenceError, NonPhysicalStateError
from rohmc.models import (KERNEL_BACKEND, LinearModel, ShallowWaterModel, assemble_jacobian,
                          propagate, swe_rhs)
from rohmc.models import _swe_numpy

from conftest import random_stable_matrix

# linear model --------------------------------------------------------------


def test_identity_model_constant_trajectory():
    m = LinearModel(np.eye(3))
    traj = propagate(m, [1.0, 2.0, 3.0], 5)
    assert traj.shape == (6, 3)
    np.testing.assert_array_equal(traj, np.tile([1.0, 2.0, 3.0], (6, 1)))


def test_scalar_doubling():
    traj = propagate(LinearModel([[2.0]]), [1.0], 3)
    np.testing.assert_array_equal(traj[:, 0], [1, 2, 4, 8])


def test_propagate_every():
    traj = propagate(LinearModel([[2.0]]), [1.0], 4, every=2)
    np.testing.assert_array_equal(traj[:, 0], [1, 4, 16])
    with pytest.raises(ContractError):
        propagate(LinearModel([[2.0]]), [1.0], 3, every=2)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 6), st.integers(0, 2 ** 31 - 1))
def test_linear_power_law(n, k, seed):
    rng = np.random.default_rng(seed)
    M = random_stable_matrix(rng, n)
    x = rng.standard_normal(n)
    out = LinearModel(M).propagate(x, k)
    np.testing.assert_allclose(out, np.linalg.matrix_power(M, k) @ x, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31 - 1))
def test_linear_adjoint_identity(n, seed):
    rng = np.random.default_rng(seed)
    m = LinearModel(random_stable_matrix(rng, n))
    dx, lam = rng.standard_normal(n), rng.standard_normal(n)
    lhs = m.tangent_linear(dx, dx, 3) @ lam
    rhs = dx @ m.adjoint(dx, lam, 3)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-14)


def test_linear_adjoint_step_is_transpose():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((4, 4))
    lam = rng.standard_normal(4)
    m = LinearModel(M)
    np.testing.assert_allclose(m.adjoint_step(np.zeros(4), lam), M.T @ lam, rtol=1e-14)
    np.testing.assert_array_equal(m.adjoint_step(np.zeros(4), np.zeros(4)), 0.0)


def test_dimension_mismatch_rejected():
    with pytest.raises(ContractError):
        LinearModel(np.eye(3)).adjoint_step(np.zeros(3), np.zeros(4))


# shallow water ----------------------------------------------------------------

@pytest.fixture(scope="module", params=["numpy", "numba"] if KERNEL_BACKEND == "numba" else ["numpy"])
def swe8(request):
    return ShallowWaterModel(nx=8, ny=8, kernels=request.param)


def test_rest_state_is_steady_without_rotation():
    m = ShallowWaterModel(nx=10, ny=10, f_hat=0.0, beta=0.0)
    x0 = m.rest_state(1.3)
    traj = m.trajectory(x0, 100)
    np.testing.assert_allclose(traj[-1], x0, atol=1e-12, rtol=0)


def test_uniform_state_has_zero_tendency():
    m = ShallowWaterModel(nx=6, ny=6, f_hat=0.0, beta=0.0)
    w = np.zeros(m.shape)
    w[0], w[1], w[2] = 0.3, 0.0, 2.0
    np.testing.assert_allclose(swe_rhs(m, m.from_fields(w)), 0.0, atol=1e-13)


def test_rest_state_with_rotation_has_zero_tendency():
    m = ShallowWaterModel(nx=6, ny=6, f_hat=5.0, beta=2.0)
    np.testing.assert_array_equal(m.rhs(m.rest_state()), 0.0)


def _sinusoid_error(nx):
    m = ShallowWaterModel(nx=nx, ny=5, f_hat=3.0, beta=0.0)
    x = (np.arange(nx) * m.dx)[:, None] * np.ones((1, 5))
    k = 2 * np.pi / m.L
    a, b, p0 = 0.1, 0.05, 2.0
    u, p = a * np.sin(k * x), p0 + b * np.cos(k * x)
    ux, px = a * k * np.cos(k * x), -b * k * np.sin(k * x)
    w = np.stack([u, np.zeros_like(u), p])
    exact = np.stack([-u * ux - 0.5 * p * px, -3.0 * u, -0.5 * p * ux - u * px])
    got = m.to_fields(m.rhs(m.from_fields(w)))
    return np.max(np.abs(got[:, :, 1:-1] - exact[:, :, 1:-1]))


def test_rhs_second_order_in_x():
    ratio = _sinusoid_error(16) / _sinusoid_error(32)
    assert 3.6 < ratio < 4.4


def test_boundary_conditions_hold_after_steps(swe8):
    x = swe8.balanced_state(amplitude=0.2)
    w = swe8.to_fields(swe8.propagate(x, 7))
    np.testing.assert_array_equal(w[1][:, 0], 0.0)
    np.testing.assert_array_equal(w[1][:, -1], 0.0)
    np.testing.assert_array_equal(w[0][:, 0], w[0][:, 1])
    np.testing.assert_array_equal(w[2][:, -1], w[2][:, -2])


def test_nonpositive_phi_raises():
    m = ShallowWaterModel(nx=5, ny=5)
    x = m.rest_state()
    m.to_fields(x)[2][2, 2] = -0.1
    with pytest.raises(NonPhysicalStateError):
        m.rhs(x)
    with pytest.raises(ModelDivergenceError) as exc:
        m.trajectory(x, 3)
    assert exc.value.step >= 0


def test_blow_up_names_step():
    m = ShallowWaterModel(nx=6, ny=6, dt=2.0)
    with pytest.raises(ModelDivergenceError) as exc:
        m.trajectory(m.balanced_state(amplitude=0.5), 200)
    assert "step" in str(exc.value)


def test_propagate_is_bitwise_deterministic(swe8):
    x = swe8.balanced_state()
    np.testing.assert_array_equal(swe8.propagate(x, 20), swe8.propagate(x, 20))


def test_swe_adjoint_identity(swe8):
    rng = np.random.default_rng(1)
    x = swe8.balanced_state(amplitude=0.2)
    for _ in range(3):
        dx = rng.standard_normal(x.size)
        lam = rng.standard_normal(x.size)
        lhs = swe8.tangent_linear(x, dx, 15) @ lam
        rhs = dx @ swe8.adjoint(x, lam, 15)
        assert abs(lhs - rhs) <= 1e-10 * abs(lhs)


def test_swe_tangent_linear_converges_first_order(swe8):
    rng = np.random.default_rng(2)
    x = swe8.balanced_state(amplitude=0.2)
    d = rng.standard_normal(x.size)
    base = swe8.propagate(x, 10)
    tl = swe8.tangent_linear(x, d, 10)

    def rel(eps):
        return np.linalg.norm(swe8.propagate(x + eps * d, 10) - base - eps * tl) / np.linalg.norm(eps * tl)

    r3, r5 = rel(1e-3), rel(1e-5)
    assert r5 < r3
    assert 30 < r3 / r5 < 300


def test_tlm_jacobian_matches_fd_assembly():
    m = ShallowWaterModel(nx=4, ny=4)
    x = m.balanced_state(amplitude=0.2)
    Jt = assemble_jacobian(m, x, 5, method="tlm")
    Jf = assemble_jacobian(m, x, 5, method="fd", eps=1e-6)
    assert np.max(np.abs(Jt - Jf)) < 1e-7 * max(1.0, np.max(np.abs(Jt)))


@pytest.mark.skipif(KERNEL_BACKEND != "numba", reason="numba unavailable")
def test_numba_and_numpy_kernels_agree():
    a = ShallowWaterModel(nx=7, ny=9, kernels="numba")
    b = a.with_kernels("numpy")
    x = a.balanced_state(amplitude=0.15)
    lam = np.random.default_rng(0).standard_normal(x.size)
    np.testing.assert_allclose(a.trajectory(x, 12), b.trajectory(x, 12), rtol=0, atol=1e-13)
    np.testing.assert_allclose(a.adjoint(x, lam, 12), b.adjoint(x, lam, 12), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.tangent_linear(x, lam, 12), b.tangent_linear(x, lam, 12),
                               rtol=1e-12, atol=1e-12)


def test_time_reversal_small_drift():
    m = ShallowWaterModel(nx=8, ny=8)
    w0 = m.to_fields(m.balanced_state(amplitude=0.2)).copy()
    errs = []
    for dt in (0.02, 0.01):
        fwd, _, _ = _swe_numpy.forward(w0, 1, dt, m.dx, m.dy, m.f)
        back, _, _ = _swe_numpy.forward(fwd[-1], 1, -dt, m.dx, m.dy, m.f)
        errs.append(np.max(np.abs(back[-1] - w0)))
    assert errs[0] < 0.02 ** 2
    assert errs[1] < errs[0]

