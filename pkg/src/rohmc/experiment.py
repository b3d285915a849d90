"""Twin-experiment pipeline behind the command-line interface.

Each stage reads its inputs from and writes its outputs to an
experiment root directory::

    root/truth/          truth_x0.bin, truth_traj.bin
    root/observations/   observations.bin, background.bin
    root/<mode>/         analysis.bin, ensemble.bin, chain.json, basis.bin
    root/diagnose/       report.jsonl, rmse.csv, timings.csv

Every stage directory gets a ``manifest.json``.  Random draws use one
master seed with a fixed stream id per purpose, so stages can be re-run
independently and still reproduce the same bytes.
"""

import csv
import io as _io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (approx_posterior_moments, ensemble_moments, kl_corollary_estimate,
                          linear_posterior_moments, reduced_posterior_moments, rmse_series,
                          schott_statistic)
from .errors import ConfigError, ContractError
from .fourdvar import (AssimilationWindow, IdentityObservation, Observation, ObservationSet,
                       SubsampleObservation, minimize)
from .hmc import BasisPolicy, HmcConfig, make_backend, run_smoother, save_ensemble, tune_step_size
from .io import canonical_json, read_array, read_json, sha256_bytes, sha256_file, write_array, write_json
from .models import LinearModel, ShallowWaterModel
from .rom import ReducedCost, initial_basis, load_basis, save_basis
from .state import CovarianceOperator, GaussianDensity, RngStream

__all__ = [
    "MODES",
    "RunManifest",
    "assimilate",
    "build_model",
    "build_window",
    "diagnose",
    "generate_truth",
    "load_window",
    "observe",
    "tune_step",
]

MODES = ("4dvar-full", "4dvar-reduced", "hmc-full", "hmc-reduced", "hmc-approx")
_VARIANT = {"hmc-full": "full", "hmc-reduced": "reduced", "hmc-approx": "approx"}
_BACKEND = {"full": "full", "reduced": "reduced", "approx": "approx_full"}

STREAM_TRUTH = 1
STREAM_BACKGROUND = 2
STREAM_OBS = 3
STREAM_HMC = {"full": 11, "reduced": 12, "approx": 13}
STREAM_TUNE = 21


# manifest -------------------------------------------------------------------

@dataclass
class RunManifest:
    """Provenance record written next to every stage's outputs.

    ``digest`` hashes everything except wall-clock timings, so it is
    stable across repeated runs.
    """

    stage: str
    config_hash: str
    seed: int
    tool_version: str = __version__
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add_file(self, path):
        path = Path(path)
        self.files[path.name] = sha256_file(path)

    def add_array(self, path):
        """Register a ``.bin`` file together with its sidecar."""
        path = Path(path)
        self.add_file(path)
        self.add_file(path.with_suffix(".json"))

    def to_dict(self):
        return {"stage": self.stage, "config_hash": self.config_hash, "seed": self.seed,
                "tool_version": self.tool_version, "timings": self.timings,
                "files": self.files, "extra": self.extra}

    @property
    def digest(self):
        d = self.to_dict()
        d.pop("timings")
        return sha256_bytes(canonical_json(d).encode("utf-8"))

    def write(self, directory):
        write_json(Path(directory) / "manifest.json", self.to_dict())

    @classmethod
    def read(cls, directory):
        d = read_json(Path(directory) / "manifest.json")
        return cls(**d)


class _Timer:
    def __init__(self):
        self.t = {}

    def __call__(self, name):
        timer = self

        class _ctx:
            def __enter__(self_):
                self_.t0 = time.monotonic()

            def __exit__(self_, *exc):
                timer.t[name] = timer.t.get(name, 0.0) + time.monotonic() - self_.t0

        return _ctx()


# builders ---------------------------------------------------------------------

def _random_rotation(dim, seed):
    rng = np.random.default_rng(seed)
    Q, R = np.linalg.qr(rng.standard_normal((dim, dim)))
    return Q * np.sign(np.diag(R))


def build_model(cfg):
    m = cfg["model"]
    if m["type"] == "swe":
        keys = ("nx", "ny", "L", "D", "g", "f_hat", "beta", "dt", "kernels")
        return ShallowWaterModel(**{k: m[k] for k in keys if k in m})
    mat = m.get("matrix", "random_rotation")
    scale = float(m.get("scale", 1.0))
    if isinstance(mat, list):
        return LinearModel(np.asarray(mat, dtype=np.float64) * scale)
    dim = int(m["dim"])
    if mat == "identity":
        return LinearModel(scale * np.eye(dim))
    return LinearModel(scale * _random_rotation(dim, int(m.get("matrix_seed", 0))))


def _truth_x0(cfg, model):
    t = cfg["truth"]
    n = model.state_dimension
    if t["type"] == "balanced_bump":
        return model.balanced_state(t.get("amplitude", 0.1), t.get("width", 0.1),
                                    tuple(t.get("center", (0.5, 0.5))), t.get("depth", 1.0))
    if t["type"] == "vector":
        v = np.asarray(t.get("values", []), dtype=np.float64)
        if v.size != n:
            raise ConfigError("truth.values", f"expected {n} values, got {v.size}")
        return v
    rng = RngStream(cfg.seed, STREAM_TRUTH)
    return float(t.get("scale", 1.0)) * rng.standard_normal(n)


def _coordinates(model):
    if isinstance(model, ShallowWaterModel):
        xs = (np.arange(model.nx) + 0.5) * model.dx
        X, Y = np.meshgrid(xs, model.y, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()]), model.L, 3
    n = model.state_dimension
    return np.arange(n, dtype=np.float64)[:, None], None, 1


def background_covariance(cfg, model):
    """``sigma_b^2`` times an optional Gaussian correlation per field."""
    p = cfg["prior"]
    n = model.state_dimension
    var = float(p["sigma_b"]) ** 2
    ell = float(p.get("correlation_length", 0.0))
    if ell == 0.0:
        return CovarianceOperator.isotropic(var, n)
    coords, period, n_fields = _coordinates(model)
    diff = coords[:, None, :] - coords[None, :, :]
    if period is not None:
        dx = diff[..., 0]
        diff[..., 0] = dx - period * np.round(dx / period)
    C = np.exp(-0.5 * np.sum(diff ** 2, axis=-1) / ell ** 2)
    return CovarianceOperator(var * np.kron(np.eye(n_fields), C))


def observation_operator(cfg, model):
    o = cfg["obs"]
    n = model.state_dimension
    if o["operator"] == "identity":
        return IdentityObservation(n)
    return SubsampleObservation(np.arange(0, n, int(o.get("stride", 1))), n)


def build_window(cfg, model, xb, ys):
    """Assimilation window from a background state and observation rows."""
    sigma_o = float(cfg["obs"]["sigma_o"])
    if sigma_o <= 0:
        raise ConfigError("obs.sigma_o", "assimilation needs sigma_o > 0")
    H = observation_operator(cfg, model)
    R = CovarianceOperator.isotropic(sigma_o ** 2, H.output_dim)
    obs = ObservationSet(Observation(k, y, H, R) for k, y in enumerate(ys))
    prior = GaussianDensity(xb, background_covariance(cfg, model))
    return AssimilationWindow(prior, obs, model, cfg.steps_per_interval, cfg.n_intervals)


def load_window(cfg, root):
    root = Path(root)
    model = build_model(cfg)
    xb, _ = read_array(root / "observations" / "background.bin")
    ys, _ = read_array(root / "observations" / "observations.bin")
    return build_window(cfg, model, xb, ys)


# stages ----------------------------------------------------------------------------

def generate_truth(cfg, root):
    """Truth initial state and its trajectory at observation times."""
    timer = _Timer()
    out = Path(root) / "truth"
    with timer("generate"):
        model = build_model(cfg)
        x0 = _truth_x0(cfg, model)
        spi = cfg.steps_per_interval
        traj = model.trajectory(x0, cfg.n_intervals * spi)[::spi]
        if isinstance(model, ShallowWaterModel):
            for x in traj:
                model.validate(x)
    man = RunManifest("generate-truth", cfg.hash, cfg.seed, timings=timer.t)
    meta = {"seed": cfg.seed, "stream_id": STREAM_TRUTH, "units": "model"}
    write_array(out / "truth_x0.bin", x0, meta=meta)
    write_array(out / "truth_traj.bin", traj, meta=dict(meta, rows="observation times"))
    man.add_array(out / "truth_x0.bin")
    man.add_array(out / "truth_traj.bin")
    man.write(out)
    return man


def observe(cfg, root):
    """Noisy observations of the truth and a perturbed background state."""
    timer = _Timer()
    root = Path(root)
    truth_file = root / "truth" / "truth_traj.bin"
    if not truth_file.exists():
        raise FileNotFoundError(f"truth trajectory not found: {truth_file}")
    out = root / "observations"
    with timer("observe"):
        model = build_model(cfg)
        traj, _ = read_array(truth_file)
        H = observation_operator(cfg, model)
        sigma_o = float(cfg["obs"]["sigma_o"])
        rng = RngStream(cfg.seed, STREAM_OBS)
        ys = np.array([H.apply(x) + sigma_o * rng.standard_normal(H.output_dim) for x in traj])
        B = background_covariance(cfg, model)
        rb = RngStream(cfg.seed, STREAM_BACKGROUND)
        xb = traj[0] + B.sqrt_apply(rb.standard_normal(traj.shape[1]))
    man = RunManifest("observe", cfg.hash, cfg.seed, timings=timer.t)
    write_array(out / "observations.bin", ys,
                meta={"seed": cfg.seed, "stream_id": STREAM_OBS, "sigma_o": sigma_o})
    write_array(out / "background.bin", xb,
                meta={"seed": cfg.seed, "stream_id": STREAM_BACKGROUND,
                      "sigma_b": cfg["prior"]["sigma_b"]})
    man.add_array(out / "observations.bin")
    man.add_array(out / "background.bin")
    man.write(out)
    return man


def _basis_kwargs(cfg):
    r = cfg["rom"]
    return dict(normalize_adjoint=r["normalize_adjoint"], center=r["center"],
                intermediate=r["intermediate"])


def _fourdvar(cfg, win):
    fv = cfg["fourdvar"]
    return minimize(win, win.xb, gtol=fv["gtol"], max_iters=fv["max_iters"])


def _trace_record(res):
    return {"converged": res.converged, "warnflag": res.warnflag, "message": res.message,
            "n_iter": res.n_iter, "n_eval": res.n_eval,
            "trace": [list(t) for t in res.trace]}


def _initial_state(cfg, win, root, timer):
    if cfg["hmc"]["init"] == "background":
        return win.xb.copy(), "background"
    path = Path(root) / "4dvar-full" / "analysis.bin"
    if path.exists():
        x, _ = read_array(path)
        return x, "4dvar-full/analysis.bin"
    with timer("init_4dvar"):
        res = _fourdvar(cfg, win)
    return res.x, "4dvar (computed)"


def hmc_config(cfg, variant):
    p = cfg.hmc_params(variant)
    return HmcConfig(step_size=p["step_size"], n_steps=p["n_steps"], burn_in=p["burn_in"],
                     mixing_steps=p["mixing_steps"], ensemble_size=p["ensemble_size"],
                     max_proposals=p["max_proposals"], seed=cfg.seed,
                     stream_id=STREAM_HMC[variant])


def basis_policy(cfg):
    r = cfg["rom"]
    return BasisPolicy(refresh_at_start=r["refresh_at_start"],
                       refresh_after_burn_in=r["refresh_after_burn_in"],
                       refresh_every=r["refresh_every"], gamma=r["gamma"],
                       normalize_adjoint=r["normalize_adjoint"])


def assimilate(cfg, root, mode):
    """Run one assimilation mode and write its analysis or ensemble."""
    if mode not in MODES:
        raise ConfigError("mode", f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    root = Path(root)
    for f in ("background.bin", "observations.bin"):
        if not (root / "observations" / f).exists():
            raise FileNotFoundError(f"missing {root / 'observations' / f}; run observe first")
    out = root / mode
    timer = _Timer()
    t_start = time.monotonic()
    with timer("setup"):
        win = load_window(cfg, root)
    man = RunManifest("assimilate", cfg.hash, cfg.seed, extra={"mode": mode})
    gamma = cfg["rom"]["gamma"]

    if mode == "4dvar-full":
        with timer("minimize"):
            res = _fourdvar(cfg, win)
        write_array(out / "analysis.bin", res.x, meta={"mode": mode})
        write_json(out / "fourdvar.json", _trace_record(res))
        man.add_array(out / "analysis.bin")
        man.add_file(out / "fourdvar.json")
    elif mode == "4dvar-reduced":
        with timer("basis"):
            basis = initial_basis(win, gamma, **_basis_kwargs(cfg))
        rc = ReducedCost(win, basis)
        fv = cfg["fourdvar"]
        with timer("minimize"):
            res = minimize(win, rc.xb_red, gtol=fv["gtol"], max_iters=fv["max_iters"],
                           fun=rc.cost_and_gradient)
        write_array(out / "analysis.bin", basis.lift(res.x), meta={"mode": mode})
        write_array(out / "analysis_reduced.bin", res.x, meta={"mode": mode, "basis_id": basis.basis_id})
        save_basis(basis, out / "basis.bin", seed=cfg.seed)
        write_json(out / "fourdvar.json", _trace_record(res))
        for name in ("analysis.bin", "analysis_reduced.bin", "basis.bin"):
            man.add_array(out / name)
        man.add_file(out / "fourdvar.json")
    else:
        variant = _VARIANT[mode]
        hcfg = hmc_config(cfg, variant)
        x_init, init_src = _initial_state(cfg, win, root, timer)
        basis = None
        if variant != "full":
            with timer("basis"):
                basis = initial_basis(win, gamma, **_basis_kwargs(cfg))
        with timer("backend"):
            backend = make_backend(_BACKEND[variant], win, basis)
        with timer("sampling"):
            chain = run_smoother(backend, win, hcfg, basis_policy(cfg) if basis else None,
                                 x_init=x_init)
        ens = chain.ensemble
        save_ensemble(chain, out / "ensemble.bin", extra={"mode": mode, "init": init_src})
        write_array(out / "analysis.bin", ens.mean(axis=0), meta={"mode": mode, "kind": "ensemble mean"})
        write_json(out / "chain.json", {"summary": chain.summary(), "accept_log": chain.accept_log,
                                        "potentials": chain.potentials,
                                        "basis_ids": chain.basis_ids})
        man.add_array(out / "ensemble.bin")
        man.add_array(out / "analysis.bin")
        man.add_file(out / "chain.json")
        if variant != "full":
            save_basis(chain.final_basis, out / "basis.bin", seed=cfg.seed)
            man.add_array(out / "basis.bin")
        n = max(len(chain.samples), 1)
        man.extra.update(acceptance_rate=chain.acceptance_rate, n_samples=len(chain.samples),
                         init=init_src)
        timer.t["per_sample"] = timer.t["sampling"] / n
    timer.t["total"] = time.monotonic() - t_start
    man.timings = timer.t
    man.write(out)
    write_json(out / "timings.json", timer.t)
    return man


def _mode_of(run_dir):
    man = RunManifest.read(run_dir)
    return man, man.extra.get("mode", Path(run_dir).name)


def _csv_text(header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def diagnose(cfg, root, run_dirs):
    """RMSE series, ensemble comparisons, covariance tests and timing table.

    ``report.jsonl`` holds one JSON record per line and contains no
    timings, so repeated runs produce identical bytes.
    """
    root = Path(root)
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise ContractError("diagnose needs at least one run directory")
    out = root / "diagnose"
    out.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    model = build_model(cfg)
    truth_x0, _ = read_array(root / "truth" / "truth_x0.bin")
    win = load_window(cfg, root)
    N = model.state_dimension
    spi, n_int = cfg.steps_per_interval, cfg.n_intervals
    dcfg = cfg["diagnose"]
    records = []
    runs = {}

    for d in run_dirs:
        man, mode = _mode_of(d)
        x, _ = read_array(d / "analysis.bin")
        if x.size != N:
            raise ContractError(f"{d.name}: analysis dimension {x.size} != model dimension {N}")
        ens = None
        if (d / "ensemble.bin").exists():
            ens, _ = read_array(d / "ensemble.bin")
            if ens.ndim != 2 or ens.shape[1] != N:
                raise ContractError(f"{d.name}: ensemble has shape {ens.shape}, expected (*, {N})")
        runs[mode] = {"dir": d, "manifest": man, "analysis": x, "ensemble": ens}
        records.append({"record": "run", "mode": mode, "dir": d.name,
                        "manifest_digest": man.digest, "config_hash": man.config_hash})

    with timer("rmse"):
        series = {"background": rmse_series(win.xb, truth_x0, model, n_int, spi)}
        for mode, r in runs.items():
            series[mode] = rmse_series(r["analysis"], truth_x0, model, n_int, spi)
            records.append({"record": "rmse", "mode": mode, "rmse_initial": float(series[mode][0]),
                            "series": series[mode].tolist()})
    names = list(series)
    rows = [[k * spi] + [float(series[n][k]) for n in names] for k in range(n_int + 1)]
    (out / "rmse.csv").write_text(_csv_text(["time_step"] + names, rows), encoding="utf-8")

    with timer("moments"):
        oracle = None
        if getattr(model, "is_linear", False):
            oracle = linear_posterior_moments(win)
            records.append({"record": "posterior_oracle", "variant": "full",
                            "mean": oracle.mean.tolist(),
                            "cov_trace": float(np.trace(oracle.cov))})
        for mode, r in runs.items():
            if r["ensemble"] is None or r["ensemble"].shape[0] < 2:
                continue
            em = ensemble_moments(r["ensemble"])
            rec = {"record": "ensemble_moments", "mode": mode, "n": int(r["ensemble"].shape[0]),
                   "spread": float(math.sqrt(np.trace(em.cov) / N)),
                   "mean_rmse_vs_truth": float(np.linalg.norm(em.mean - truth_x0) / math.sqrt(N))}
            if oracle is not None:
                target = oracle
                if mode != "hmc-full" and (r["dir"] / "basis.bin").exists():
                    basis = load_basis(r["dir"] / "basis.bin")
                    if mode == "hmc-approx":
                        target = approx_posterior_moments(win, basis)
                    else:
                        red = reduced_posterior_moments(win, basis)
                        target = type(oracle)(basis.lift(red.mean),
                                              basis.V @ red.cov @ basis.V.T, "reduced")
                se = np.sqrt(np.diag(target.cov) / r["ensemble"].shape[0])
                z = np.abs(em.mean - target.mean) / np.where(se > 0, se, np.inf)
                rec.update(target_variant=target.variant,
                           max_mean_z=float(np.max(z)),
                           cov_rel_error=float(np.linalg.norm(em.cov - target.cov)
                                               / np.linalg.norm(target.cov)))
            records.append(rec)

    with timer("schott"):
        ref = runs.get(dcfg["reference"])
        for variant in dcfg["variants"]:
            r = runs.get(variant)
            if ref is None or r is None or ref["ensemble"] is None or r["ensemble"] is None:
                records.append({"record": "schott", "reference": dcfg["reference"],
                                "variant": variant, "skipped": "missing ensemble"})
                continue
            E1, E2 = ref["ensemble"], r["ensemble"]
            rep = schott_statistic(np.cov(E1, rowvar=False), np.cov(E2, rowvar=False),
                                   E1.shape[0], E2.shape[0], dcfg["alpha"], dcfg["schott_form"])
            records.append(dict({"record": "schott", "reference": dcfg["reference"],
                                 "variant": variant}, **rep.to_dict()))

    with timer("kl"):
        r = runs.get("hmc-approx")
        if r is not None and r["ensemble"] is not None and (r["dir"] / "basis.bin").exists():
            basis = load_basis(r["dir"] / "basis.bin")
            est = kl_corollary_estimate(win, basis, r["ensemble"])
            records.append({"record": "kl_corollary", "mode": "hmc-approx",
                            "basis_id": basis.basis_id, "estimate": est})

    text = "".join(json.dumps(rec, sort_keys=True, allow_nan=True) + "\n" for rec in records)
    (out / "report.jsonl").write_text(text, encoding="utf-8")

    trows = []
    for mode, r in runs.items():
        t = r["manifest"].timings
        trows.append([mode, float(t.get("total", float("nan"))),
                      float(t.get("sampling", t.get("minimize", float("nan")))),
                      int(r["manifest"].extra.get("n_samples", 0)),
                      float(t.get("per_sample", float("nan")))])
    (out / "timings.csv").write_text(
        _csv_text(["mode", "total_seconds", "core_seconds", "n_samples", "seconds_per_sample"], trows),
        encoding="utf-8")

    man = RunManifest("diagnose", cfg.hash, cfg.seed, timings=timer.t,
                      extra={"runs": [d.name for d in run_dirs]})
    for f in ("report.jsonl", "rmse.csv", "timings.csv"):
        man.add_file(out / f)
    man.write(out)
    return man


def tune_step(cfg, root, mode):
    """Scan step sizes for a target rejection rate of 25-30 percent."""
    if mode not in _VARIANT:
        raise ConfigError("mode", f"tune-step needs an hmc mode, got {mode!r}")
    root = Path(root)
    variant = _VARIANT[mode]
    timer = _Timer()
    win = load_window(cfg, root)
    x_init, _ = _initial_state(cfg, win, root, timer)
    basis = None
    if variant != "full":
        basis = initial_basis(win, cfg["rom"]["gamma"], **_basis_kwargs(cfg))
    backend = make_backend(_BACKEND[variant], win, basis)
    hcfg = hmc_config(cfg, variant)
    with timer("tune"):
        res = tune_step_size(backend, backend.default_mass(), backend.restrict(x_init), hcfg,
                             RngStream(cfg.seed, STREAM_TUNE))
    out = root / "tune" / mode
    write_json(out / "tune.json", dict(res.to_dict(), mode=mode))
    man = RunManifest("tune-step", cfg.hash, cfg.seed, timings=timer.t, extra={"mode": mode})
    man.add_file(out / "tune.json")
    man.write(out)
    return res
