"""Experiment configuration: presets, schema validation and canonical form.

A configuration is a JSON object.  User input is deep-merged over a
preset (``swe`` by default) and validated against ``config_schema.json``
plus a few cross-field rules.  Errors carry the dotted path of the
offending key.
"""

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .io import canonical_json, sha256_bytes

__all__ = [
    "PRESETS",
    "ExperimentConfig",
    "canonical_config",
    "load_config",
    "schema",
    "validate_config",
]

_SWE = {
    "model": {"type": "swe", "nx": 15, "ny": 15, "L": 1.0, "D": 1.0, "g": 1.0,
              "f_hat": 5.0, "beta": 2.0, "dt": 0.02, "kernels": "auto"},
    "truth": {"type": "balanced_bump", "amplitude": 0.1, "width": 0.1,
              "center": [0.5, 0.5], "depth": 1.0},
    "window": {"length": 91, "n_obs": 10},
    "prior": {"sigma_b": 0.02, "correlation_length": 0.0},
    "obs": {"operator": "identity", "stride": 1, "sigma_o": 0.01},
    "rom": {"gamma": 0.99, "normalize_adjoint": True, "center": False, "intermediate": False,
            "refresh_at_start": True, "refresh_after_burn_in": True, "refresh_every": 0},
    "hmc": {"step_size": 0.01, "n_steps": 10, "burn_in": 25, "mixing_steps": 5,
            "ensemble_size": 100, "max_proposals": None, "init": "4dvar", "variants": {}},
    "fourdvar": {"gtol": 1e-6, "max_iters": 500},
    "diagnose": {"reference": "hmc-full", "variants": ["hmc-reduced", "hmc-approx"],
                 "alpha": 0.01, "schott_form": "printed"},
    "seed": 1234,
    "output": {"directory": "runs"},
}

_LINEAR = copy.deepcopy(_SWE)
_LINEAR.update({
    "model": {"type": "linear", "dim": 10, "matrix": "random_rotation", "scale": 0.95,
              "matrix_seed": 7},
    "truth": {"type": "gaussian", "scale": 1.0},
    "window": {"length": 3, "n_obs": 3},
    "prior": {"sigma_b": 1.0, "correlation_length": 0.0},
    "obs": {"operator": "identity", "stride": 1, "sigma_o": 1.0},
    "rom": {"gamma": 0.99, "normalize_adjoint": True, "center": False, "intermediate": False,
            "refresh_at_start": False, "refresh_after_burn_in": False, "refresh_every": 0},
    "hmc": {"step_size": 0.1, "n_steps": 10, "burn_in": 25, "mixing_steps": 5,
            "ensemble_size": 100, "max_proposals": None, "init": "4dvar",
            "variants": {"full": {"ensemble_size": 1000}}},
})

PRESETS = {"swe": _SWE, "linear": _LINEAR}


def schema():
    text = resources.files("rohmc").joinpath("config_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _path(parts):
    return ".".join(str(p) for p in parts) or "<root>"


def validate_config(cfg):
    """Raise :class:`ConfigError` with a key path for the first problem found."""
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        e = errors[0]
        raise ConfigError(_path(e.absolute_path), e.message)
    w = cfg["window"]
    if w["n_obs"] > 1 and (w["length"] - 1) % (w["n_obs"] - 1):
        raise ConfigError("window.length",
                          f"length - 1 = {w['length'] - 1} is not divisible into "
                          f"{w['n_obs'] - 1} observation intervals")
    if w["n_obs"] > 1 and w["length"] < w["n_obs"]:
        raise ConfigError("window.length", "window shorter than the number of observations")
    m = cfg["model"]
    if m["type"] == "linear":
        if "dim" not in m and not isinstance(m.get("matrix"), list):
            raise ConfigError("model.dim", "linear model needs dim or an explicit matrix")
        if isinstance(m.get("matrix"), list):
            rows = m["matrix"]
            if any(len(r) != len(rows) for r in rows):
                raise ConfigError("model.matrix", "matrix must be square")
            if "dim" in m and m["dim"] != len(rows):
                raise ConfigError("model.dim", "dim does not match the matrix size")
        if cfg["truth"]["type"] == "balanced_bump":
            raise ConfigError("truth.type", "balanced_bump requires the swe model")
    for name in cfg["diagnose"].get("variants", []) + [cfg["diagnose"].get("reference", "hmc-full")]:
        if name not in ("hmc-full", "hmc-reduced", "hmc-approx", "4dvar-full", "4dvar-reduced"):
            raise ConfigError("diagnose", f"unknown run mode {name!r}")
    return cfg


def canonical_config(cfg):
    """Canonical JSON text of a configuration."""
    return canonical_json(cfg)


def load_config(source=None, preset=None, overrides=None):
    """Build a validated configuration.

    Parameters
    ----------
    source : str, Path, dict or None
        JSON file, mapping, or ``None``.  A file may name its base preset
        under the top-level key ``"preset"``; the string ``"builtin:NAME"``
        selects a preset directly.
    preset : str, optional
        Base preset when ``source`` does not name one (default ``"swe"``).
    overrides : dict, optional
        Deep-merged last.
    """
    user = {}
    if isinstance(source, (str, Path)):
        s = str(source)
        if s.startswith("builtin:"):
            preset = s.split(":", 1)[1]
        else:
            try:
                user = json.loads(Path(s).read_text(encoding="utf-8"))
            except FileNotFoundError as exc:
                raise ConfigError("<file>", f"config file not found: {s}") from exc
            except json.JSONDecodeError as exc:
                raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    elif isinstance(source, dict):
        user = copy.deepcopy(source)
    elif source is not None:
        raise ConfigError("<root>", "config source must be a path or mapping")
    if not isinstance(user, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    preset = user.pop("preset", None) or preset or "swe"
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}")
    cfg = _merge(PRESETS[preset], user)
    cfg["preset"] = preset
    if overrides:
        cfg = _merge(cfg, overrides)
    return ExperimentConfig(validate_config(cfg))


class ExperimentConfig:
    """Validated configuration with convenience accessors."""

    def __init__(self, data):
        self._data = copy.deepcopy(data)

    @property
    def data(self):
        return copy.deepcopy(self._data)

    def __getitem__(self, key):
        return copy.deepcopy(self._data[key])

    @property
    def seed(self):
        return int(self._data["seed"])

    @property
    def n_intervals(self):
        return self._data["window"]["n_obs"] - 1

    @property
    def steps_per_interval(self):
        w = self._data["window"]
        if w["n_obs"] == 1:
            return 1
        return (w["length"] - 1) // (w["n_obs"] - 1)

    def hmc_params(self, variant):
        """Sampler settings for ``full``, ``reduced`` or ``approx``."""
        h = self._data["hmc"]
        base = {k: h[k] for k in ("step_size", "n_steps", "burn_in", "mixing_steps",
                                  "ensemble_size", "max_proposals")}
        base.update(h.get("variants", {}).get(variant, {}))
        return base

    def canonical(self):
        return canonical_config(self._data)

    @property
    def hash(self):
        return sha256_bytes(self.canonical().encode("utf-8"))

    def with_overrides(self, overrides):
        return ExperimentConfig(validate_config(_merge(self._data, overrides)))

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.canonical() == other.canonical()
