import os

import numpy as np
import pytest

from rohmc.fourdvar import (AssimilationWindow, IdentityObservation, MatrixObservation, Observation,
                            ObservationSet)
from rohmc.models import LinearModel, ShallowWaterModel
from rohmc.state import CovarianceOperator, GaussianDensity

os.environ.setdefault("PYTHONHASHSEED", "0")


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.geomspace(1.0, cond, n)
    return (Q * w) @ Q.T


def random_stable_matrix(rng, n, radius=0.95):
    A = rng.standard_normal((n, n))
    return radius * A / np.max(np.abs(np.linalg.eigvals(A)))


def linear_window(seed=0, dim=6, n_obs=3, spi=1, obs_dim=None, sigma_o=0.5, dense_b=True):
    """Small linear-Gaussian window with random operators."""
    rng = np.random.default_rng(seed)
    M = random_stable_matrix(rng, dim)
    model = LinearModel(M)
    B = random_spd(rng, dim, 5.0) if dense_b else np.eye(dim)
    xb = rng.standard_normal(dim)
    obs = []
    x = xb + rng.standard_normal(dim)
    for k in range(n_obs):
        if obs_dim is None:
            H = IdentityObservation(dim)
        else:
            H = MatrixObservation(rng.standard_normal((obs_dim, dim)))
        y = H.apply(x) + sigma_o * rng.standard_normal(H.output_dim)
        R = CovarianceOperator.isotropic(sigma_o ** 2, H.output_dim)
        obs.append(Observation(k, y, H, R))
        x = model.propagate(x, spi)
    prior = GaussianDensity(xb, CovarianceOperator(B))
    return AssimilationWindow(prior, ObservationSet(obs), model, spi, n_obs - 1)


def swe_window(nx=8, ny=8, n_obs=4, spi=5, sigma_b=0.02, sigma_o=0.01, seed=0):
    """Small shallow-water twin window on an ``nx`` by ``ny`` grid."""
    model = ShallowWaterModel(nx=nx, ny=ny)
    rng = np.random.default_rng(seed)
    truth = model.balanced_state()
    N = model.state_dimension
    traj = model.trajectory(truth, spi * (n_obs - 1))
    H = IdentityObservation(N)
    R = CovarianceOperator.isotropic(sigma_o ** 2, N)
    obs = [Observation(k, traj[k * spi] + sigma_o * rng.standard_normal(N), H, R)
           for k in range(n_obs)]
    xb = truth + sigma_b * rng.standard_normal(N)
    prior = GaussianDensity(xb, CovarianceOperator.isotropic(sigma_b ** 2, N))
    return AssimilationWindow(prior, ObservationSet(obs), model, spi, n_obs - 1), truth


@pytest.fixture
def lin_win():
    return linear_window()


@pytest.fixture(scope="session")
def swe_small():
    return swe_window()


# acceptance reporting ----------------------------------------------------------------

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by the test")
    config.addinivalue_line("markers", "slow: runs the full shallow-water protocol")


@pytest.fixture
def note(request):
    """Attach a one-line measurement to the test's acceptance summary entry."""
    return lambda text: request.node.user_properties.append(("note", text))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    entry = item.config.stash[_CRITERIA].setdefault(mark.args[0], {"ok": True, "notes": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["notes"].extend(v for k, v in item.user_properties if k == "note" and v not in entry["notes"])


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_CRITERIA]
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(results):
        r = results[n]
        terminalreporter.write_line(f"CRITERION {n:>2}: {'PASS' if r['ok'] else 'FAIL'}  "
                                    + "; ".join(r["notes"]))
