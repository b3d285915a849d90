"""Acceptance criteria 1-11.

Each test carries ``@pytest.mark.criterion(n)``; the terminal summary
prints one PASS/FAIL line per criterion with the measured numbers.
"""
import json
import math

import numpy as np
import pytest

from rohmc.config import load_config
from rohmc.diagnostics import (approx_posterior_moments, kl_projected_vs_full,
                               linear_posterior_moments, projected_pdf_quadform_check,
                               reduced_posterior_moments)
from rohmc.experiment import (RunManifest, assimilate, diagnose, generate_truth, hmc_config,
                              load_window, observe)
from rohmc.fourdvar import cost, gradient, minimize
from rohmc.hmc import FunctionBackend, MassMatrix, hamiltonian, make_backend, run_smoother
from rohmc.io import read_array
from rohmc.rom import (approx_full_cost, approx_full_gradient, build_basis, energy_fraction,
                       initial_basis, reduced_cost, reduced_gradient)

from conftest import random_spd

HMC_MODES = ("hmc-full", "hmc-reduced", "hmc-approx")


def _pipeline(cfg, root, modes):
    generate_truth(cfg, root)
    observe(cfg, root)
    for m in modes:
        assimilate(cfg, root, m)


def _orth(rng, n, r):
    return np.linalg.qr(rng.standard_normal((n, r)))[0]


# 1. gradients -------------------------------------------------------------------------

def _fd_errors(f, g, x, rng, n_dirs=20, eps=1e-5):
    """Relative central-difference error on coordinate and random directions.

    With fewer than ``n_dirs`` coordinates every coordinate is used and the
    remainder is filled with random unit directions.
    """
    gx = g(x)
    n = x.size
    dirs = [np.eye(n)[i] for i in rng.choice(n, min(n, n_dirs), replace=False)]
    while len(dirs) < n_dirs:
        d = rng.standard_normal(n)
        dirs.append(d / np.linalg.norm(d))
    errs = []
    for d in dirs:
        fd = (f(x + eps * d) - f(x - eps * d)) / (2 * eps)
        exact = gx @ d
        errs.append(abs(fd - exact) / max(abs(exact), 1e-300))
    return np.array(errs)


def _gradient_errors(win, x, rng):
    b = initial_basis(win)
    xr = b.restrict(x)
    return {
        "full": _fd_errors(lambda z: cost(win, z), lambda z: gradient(win, z), x, rng),
        "reduced": _fd_errors(lambda z: reduced_cost(win, b, z), lambda z: reduced_gradient(win, b, z),
                              xr, rng),
        "approx": _fd_errors(lambda z: approx_full_cost(win, b, z),
                             lambda z: approx_full_gradient(win, b, z), x, rng),
    }


@pytest.fixture(scope="module")
def swe8_window(tmp_path_factory):
    root = tmp_path_factory.mktemp("swe8")
    cfg = load_config("builtin:swe", overrides={"model": {"nx": 8, "ny": 8}})
    generate_truth(cfg, root)
    observe(cfg, root)
    return load_window(cfg, root)


@pytest.mark.criterion(1)
def test_gradients_linear(tmp_path, note):
    cfg = load_config("builtin:linear")
    generate_truth(cfg, tmp_path)
    observe(cfg, tmp_path)
    win = load_window(cfg, tmp_path)
    rng = np.random.default_rng(0)
    errs = _gradient_errors(win, win.xb + rng.standard_normal(win.dim), rng)
    worst = {k: float(v.max()) for k, v in errs.items()}
    note("linear max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert all(v.size >= 20 for v in errs.values())
    assert max(worst.values()) < 1e-6


@pytest.mark.criterion(1)
def test_gradients_swe(swe8_window, note):
    win = swe8_window
    rng = np.random.default_rng(1)
    errs = _gradient_errors(win, win.xb + 0.005 * rng.standard_normal(win.dim), rng)
    worst = {k: float(v.max()) for k, v in errs.items()}
    note("SWE 8x8 max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert max(worst.values()) < 1e-4


# 2, 3. Gaussian targets -------------------------------------------------------------------

@pytest.fixture(scope="module")
def linear_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("linear")
    cfg = load_config("builtin:linear")
    generate_truth(cfg, root)
    observe(cfg, root)
    win = load_window(cfg, root)
    return cfg, win, initial_basis(win, cfg["rom"]["gamma"]), minimize(win, win.xb).x


def _match_target(samples, target, note, label):
    S = np.asarray(samples)
    m, C = S.mean(axis=0), np.cov(S, rowvar=False)
    z = np.abs(m - target.mean) / np.sqrt(np.diag(C) / S.shape[0])
    rel = np.linalg.norm(C - target.cov) / np.linalg.norm(target.cov)
    note(f"{label}: max |mean err|/SE {z.max():.2f}, cov rel err {rel:.3f}")
    assert z.max() < 3.0
    assert rel < 0.10


def _chain(cfg, win, kind, basis, x0, stream):
    be = make_backend(kind, win, basis)
    h = hmc_config(cfg, "full").replace(ensemble_size=5000, stream_id=stream)
    return run_smoother(be, win, h, None, x_init=x0)


@pytest.mark.criterion(2)
def test_full_hmc_reproduces_posterior(linear_setup, note):
    cfg, win, _, x0 = linear_setup
    ch = _chain(cfg, win, "full", None, x0, 11)
    _match_target(ch.ensemble, linear_posterior_moments(win), note, "full")


@pytest.mark.criterion(3)
def test_reduced_hmc_reproduces_projected_posterior(linear_setup, note):
    cfg, win, b, x0 = linear_setup
    ch = _chain(cfg, win, "reduced", b, x0, 12)
    _match_target(ch.samples, reduced_posterior_moments(win, b), note, f"reduced (n_red {b.n_red})")


@pytest.mark.criterion(3)
def test_approx_hmc_reproduces_approx_posterior(linear_setup, note):
    cfg, win, b, x0 = linear_setup
    ch = _chain(cfg, win, "approx_full", b, x0, 13)
    _match_target(ch.ensemble, approx_posterior_moments(win, b), note, "approx")


# 4, 5. projection identities ----------------------------------------------------------------

@pytest.mark.criterion(4)
def test_projected_quadratic_forms_agree(note):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 16))
        r = int(rng.integers(1, n + 1))
        lhs, rhs = projected_pdf_quadform_check(random_spd(rng, n, 50.0), _orth(rng, n, r),
                                                rng.standard_normal(n), rng.standard_normal(n))
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300) if rhs else abs(lhs))
    note(f"100 instances, max rel discrepancy {worst:.1e}")
    assert worst < 1e-8


def _kl_by_terms(A0, xa, V):
    """Term-by-term assembly from eigendecompositions, independent of the package."""
    n, r = V.shape
    P = V @ V.T
    Ab = P @ A0 @ P
    w, U = np.linalg.eigh(Ab)
    keep = w > 1e-12 * w.max()
    Ab_pinv = (U[:, keep] / w[keep]) @ U[:, keep].T
    A_inv = np.linalg.inv(A0)
    d = P @ xa - xa
    log_ratio = np.sum(np.log(np.linalg.eigvalsh(A0))) - np.sum(np.log(w[keep]))
    return 0.5 * ((n - r) * math.log(2 * math.pi) + log_ratio + d @ A_inv @ d
                  + np.trace((A_inv - Ab_pinv) @ Ab))


@pytest.mark.criterion(5)
def test_kl_matches_term_by_term_assembly(note):
    rng = np.random.default_rng(5)
    worst, worst_full = 0.0, 0.0
    for _ in range(50):
        # truncated bases only; the untruncated case is the zero check below
        n = int(rng.integers(2, 12))
        r = int(rng.integers(1, n))
        A0, xa, V = random_spd(rng, n, 20.0), rng.standard_normal(n), _orth(rng, n, r)
        ref = _kl_by_terms(A0, xa, V)
        worst = max(worst, abs(kl_projected_vs_full(A0, xa, V) - ref) / max(abs(ref), 1e-12))
        worst_full = max(worst_full, abs(kl_projected_vs_full(A0, xa, _orth(rng, n, n))))
    note(f"max rel err {worst:.1e}, max |KL| at n_red = N {worst_full:.1e}")
    assert worst < 1e-8
    assert worst_full < 1e-10


# 6. integrator --------------------------------------------------------------------------------

def _quadratic_system(n=10, seed=6):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n, 10.0)
    be = FunctionBackend(lambda x: 0.5 * x @ A @ x, lambda x: A @ x, n)
    return be, MassMatrix(rng.uniform(0.5, 2.0, n))


@pytest.mark.criterion(6)
def test_verlet_is_symplectic_and_reversible(note):
    from rohmc.hmc import verlet_trajectory

    n = 10
    be, mass = _quadratic_system(n)
    J = np.empty((2 * n, 2 * n))
    for j in range(2 * n):
        e = np.eye(2 * n)[j]
        p, x = verlet_trajectory(be, mass, e[:n], e[n:], 0.1, 1)
        J[:, j] = np.concatenate([p, x])
    det_err = abs(np.linalg.det(J) - 1.0)

    rng = np.random.default_rng(7)
    starts = [(rng.standard_normal(n), rng.standard_normal(n)) for _ in range(50)]

    def mean_dh(h, T=1.0):
        out = []
        for p0, x0 in starts:
            p, x = verlet_trajectory(be, mass, p0, x0, h, int(round(T / h)))
            out.append(abs(hamiltonian(be, mass, p, x) - hamiltonian(be, mass, p0, x0)))
        return np.mean(out)

    ratio = mean_dh(0.02) / mean_dh(0.01)
    rev = 0.0
    for p0, x0 in starts[:10]:
        p1, x1 = verlet_trajectory(be, mass, p0, x0, 0.05, 20)
        p2, x2 = verlet_trajectory(be, mass, -p1, x1, 0.05, 20)
        rev = max(rev, np.max(np.abs(x2 - x0)), np.max(np.abs(p2 + p0)))
    note(f"|det-1| {det_err:.1e}, dH ratio {ratio:.3f}, reversal err {rev:.1e}")
    assert det_err < 1e-10
    assert 3.5 <= ratio <= 4.5
    assert rev < 1e-10


# 7. POD ----------------------------------------------------------------------------------------

@pytest.mark.criterion(7)
def test_pod_identities(note):
    rng = np.random.default_rng(8)
    worst_orth, worst_energy = 0.0, 0.0
    for _ in range(30):
        n, k = int(rng.integers(5, 40)), int(rng.integers(2, 30))
        X = rng.standard_normal((n, k)) * np.geomspace(1.0, 1e-3, k)
        gamma = float(rng.uniform(0.5, 0.999))
        b = build_basis(X, gamma)
        V, s, p = b.V, b.singular_values, b.n_red
        worst_orth = max(worst_orth, np.max(np.abs(V.T @ V - np.eye(p))))
        resid = np.linalg.norm(X - V @ (V.T @ X)) ** 2
        discarded = np.sum(s[p:] ** 2)
        worst_energy = max(worst_energy, abs(resid - discarded) / max(discarded, 1e-300)
                           if discarded > 1e-20 * np.sum(s ** 2) else resid / np.sum(s ** 2))
        I = energy_fraction(s)
        assert I[p - 1] >= gamma
        assert p == 1 or I[p - 2] < gamma
    note(f"max |VtV-I| {worst_orth:.1e}, truncation energy rel err {worst_energy:.1e}")
    assert worst_orth < 1e-10
    assert worst_energy < 1e-10


# 8, 10. shallow-water protocol -------------------------------------------------------------------

@pytest.fixture(scope="module")
def swe_protocol(tmp_path_factory):
    root = tmp_path_factory.mktemp("swe_protocol")
    cfg = load_config("builtin:swe")
    _pipeline(cfg, root, ("4dvar-full",) + HMC_MODES)
    truth, _ = read_array(root / "truth" / "truth_x0.bin")
    rmse = {}
    for m in ("4dvar-full",) + HMC_MODES:
        x, _ = read_array(root / m / "analysis.bin")
        rmse[m] = float(np.sqrt(np.mean((x - truth) ** 2)))
    per_sample = {m: RunManifest.read(root / m).timings["per_sample"] for m in HMC_MODES}
    return rmse, per_sample


@pytest.mark.slow
@pytest.mark.criterion(8)
def test_hmc_means_match_fourdvar_rmse(swe_protocol, note):
    rmse, _ = swe_protocol
    ref = rmse["4dvar-full"]
    ratios = {m: rmse[m] / ref for m in HMC_MODES}
    note(f"4D-Var RMSE {ref:.2e}; ratios " + ", ".join(f"{m} {r:.2f}" for m, r in ratios.items()))
    assert all(r <= 1.1 for r in ratios.values())


@pytest.mark.slow
@pytest.mark.criterion(10)
def test_reduced_samplers_are_faster(swe_protocol, note):
    _, t = swe_protocol
    ratios = {m: t[m] / t["hmc-full"] for m in ("hmc-reduced", "hmc-approx")}
    note(f"full {t['hmc-full']:.3f} s/sample; ratios "
         + ", ".join(f"{m} {r:.2f}" for m, r in ratios.items()))
    assert all(r <= 0.5 for r in ratios.values())


# 9. covariance test ordering --------------------------------------------------------------------

@pytest.mark.criterion(9)
def test_schott_orders_reduced_above_approx(tmp_path, note):
    wins, pairs = 0, []
    for rep in range(10):
        cfg = load_config("builtin:linear", overrides={"seed": 100 + rep})
        root = tmp_path / str(rep)
        _pipeline(cfg, root, ("4dvar-full",) + HMC_MODES)
        diagnose(cfg, root, [root / m for m in HMC_MODES])
        recs = [json.loads(l) for l in (root / "diagnose" / "report.jsonl").read_text().splitlines()]
        t = {r["variant"]: abs(r["t_star"]) for r in recs if r["record"] == "schott"}
        pairs.append((t["hmc-reduced"], t["hmc-approx"]))
        wins += t["hmc-reduced"] > t["hmc-approx"]
    med = np.median(pairs, axis=0)
    note(f"reduced > approx in {wins}/10; median |t*| reduced {med[0]:.1f}, approx {med[1]:.1f}")
    assert wins >= 8


# 11. determinism -----------------------------------------------------------------------------------

def _run_bytes(cfg, root):
    _pipeline(cfg, root, ("4dvar-full",) + HMC_MODES)
    diagnose(cfg, root, [root / m for m in ("4dvar-full",) + HMC_MODES])
    files = [f"{m}/ensemble.bin" for m in HMC_MODES] + ["4dvar-full/analysis.bin",
                                                         "diagnose/report.jsonl", "diagnose/rmse.csv"]
    return {f: (root / f).read_bytes() for f in files}


@pytest.mark.criterion(11)
def test_repeated_runs_are_byte_identical(tmp_path, note):
    configs = {
        "linear": load_config("builtin:linear"),
        "swe": load_config("builtin:swe", overrides={
            "model": {"nx": 6, "ny": 6}, "window": {"length": 31, "n_obs": 4},
            "hmc": {"ensemble_size": 5, "burn_in": 5, "mixing_steps": 2}}),
    }
    checked = 0
    for name, cfg in configs.items():
        a = _run_bytes(cfg, tmp_path / name / "a")
        b = _run_bytes(cfg, tmp_path / name / "b")
        for f in a:
            assert a[f] == b[f], f"{name}: {f} differs"
            checked += 1
    note(f"{checked} artifacts byte-identical across two runs")
