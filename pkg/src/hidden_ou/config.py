"""Strict configuration schema shared by the command line and the harness.

A configuration is a mapping of sections. Unknown sections or keys are
rejected with the dotted name of the offending key.
"""

from __future__ import annotations

import copy
from typing import Any, Dict, List, Optional

import yaml

from .model import ParamSpec, SystemParams
from .simulate import SimConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


# section -> key -> (default, description)
SCHEMA: Dict[str, Dict[str, tuple]] = {
    "model": {
        "a": (1.0, "observation gain"),
        "f": (1.0, "mean-reversion rate of the hidden state"),
        "b": (1.0, "state noise intensity"),
        "sigma": (1.0, "observation noise intensity"),
        "d2": (0.5, "initial state variance"),
        "strict": (True, "reject a=0 or b=0"),
    },
    "spec": {
        "case": ("F", "unknown parameter(s): F, B, A, FB or FA"),
        "alpha": (0.5, "lower bound(s) of the parameter interval"),
        "beta": (2.0, "upper bound(s) of the parameter interval"),
        "delta": (0.6, "learning exponent, K = floor(T**delta)"),
    },
    "sim": {
        "dt": (0.01, "grid step"),
        "T": (100.0, "horizon"),
        "scheme": ("exact", "exact or euler"),
        "seed": (0, "seed of the simulated path"),
    },
    "input": {
        "path": (None, "CSV written by `simulate`; simulated from `sim` when null"),
    },
    "filter": {
        "theta": (None, "parameter value for the filter; the true value when null"),
        "with_mddot": (False, "also integrate the second derivative (case F)"),
        "stationary_gamma": (False, "use the stationary Riccati root throughout"),
    },
    "estimator": {
        "norm": ("elapsed", "normalization: elapsed (t - K) or time (t)"),
        "tau_grid": (None, "output tau values; every grid point when null"),
        "n_tau": (20, "two-step output grid size when tau_grid is null"),
        "grid_size": (50, "grid points for mle-grid"),
        "drift": ("centered", "adaptive recurrence: centered or literal"),
    },
    "oracle": {
        "theta": (1.0, "parameter value for the comparison table"),
        "mc_T": (1e5, "horizon of the time-average oracle"),
        "mc_dt": (0.005, "grid step of the time-average oracle (bias is O(dt))"),
    },
    "mc": {
        "reps": (100, "replications"),
        "workers": (1, "worker processes"),
        "master_seed": (0, "master seed; rep i uses the stream (master_seed, i)"),
        "tau_grid": ([1.0], "output tau values"),
        "estimator": ("onestep", "prelim, onestep, twostep, adaptive, vector or mle_grid"),
        "grid_size": (50, "grid points when estimator is mle_grid"),
        "prelim_at_truth": (False, "replace the preliminary estimate by the true value"),
    },
    "checks": {},
}
CHECK_KEYS = ("name", "kind", "tolerance", "tau")


def defaults() -> Dict[str, Any]:
    out = {s: {k: copy.deepcopy(v[0]) for k, v in keys.items()} for s, keys in SCHEMA.items()}
    out["checks"] = []
    return out


def describe_keys(sections: Optional[List[str]] = None) -> str:
    """One line per accepted key, for ``--help``."""
    lines = []
    for sec, keys in SCHEMA.items():
        if sections is not None and sec not in sections:
            continue
        if sec == "checks":
            lines.append("  checks: list of {name, kind, tolerance, tau}; kind one of "
                         "var_ratio, ks_p, abs_mean, cov_min, cov_frobenius")
            continue
        for k, (default, text) in keys.items():
            lines.append(f"  {sec}.{k} (default {default!r}): {text}")
    return "\n".join(lines)


def _merge(base: dict, new: dict):
    for sec, val in new.items():
        if sec not in SCHEMA:
            raise ConfigError(sec, "unknown section")
        if sec == "checks":
            if not isinstance(val, list):
                raise ConfigError("checks", "must be a list")
            for i, c in enumerate(val):
                if not isinstance(c, dict):
                    raise ConfigError(f"checks[{i}]", "must be a mapping")
                for k in c:
                    if k not in CHECK_KEYS:
                        raise ConfigError(f"checks[{i}].{k}", "unknown key")
            base["checks"] = copy.deepcopy(val)
            continue
        if val is None:
            continue
        if not isinstance(val, dict):
            raise ConfigError(sec, "must be a mapping")
        for k, v in val.items():
            if k not in SCHEMA[sec]:
                raise ConfigError(f"{sec}.{k}", "unknown key")
            base[sec][k] = v


def apply_override(cfg: dict, item: str):
    """Apply a ``section.key=value`` override; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(item, "override must look like section.key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(key, "override key must be section.key")
    sec, k = parts
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value: {exc}") from None
    if sec == "checks":
        raise ConfigError(key, "checks cannot be overridden; edit the config file")
    _merge(cfg, {sec: {k: value}})


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the YAML file, then the overrides."""
    cfg = defaults()
    if path is not None:
        with open(path) as fh:
            try:
                data = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(str(path), f"invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(str(path), "top level must be a mapping")
        _merge(cfg, data)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def _build(section: str, fn):
    try:
        return fn()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(section, str(exc)) from None


def _pair_or_float(v):
    return tuple(float(x) for x in v) if isinstance(v, (list, tuple)) else float(v)


def build_params(cfg: dict) -> SystemParams:
    m = cfg["model"]
    return _build("model", lambda: SystemParams(
        a=float(m["a"]), f=float(m["f"]), b=float(m["b"]), sigma=float(m["sigma"]),
        d2=float(m["d2"]), strict=bool(m["strict"])))


def build_spec(cfg: dict) -> ParamSpec:
    s = cfg["spec"]
    return _build("spec", lambda: ParamSpec(case=str(s["case"]), alpha=_pair_or_float(s["alpha"]),
                                            beta=_pair_or_float(s["beta"]),
                                            delta=float(s["delta"])))


def build_sim(cfg: dict) -> SimConfig:
    s = cfg["sim"]
    sim = _build("sim", lambda: SimConfig(dt=float(s["dt"]), horizon_T=float(s["T"]),
                                          seed=int(s["seed"]), scheme=str(s["scheme"])))
    k = round(1.0 / sim.dt)
    if abs(k * sim.dt - 1.0) > 1e-9:
        raise ConfigError("sim.dt", "1/dt must be an integer")
    return sim


def experiment_from_dict(d: dict):
    """Build an :class:`~hidden_ou.harness.ExperimentConfig` from a config mapping."""
    from .harness import CheckSpec, ExperimentConfig

    cfg = defaults()
    _merge(cfg, d)
    params = build_params(cfg)
    spec = build_spec(cfg)
    sim = build_sim(cfg)
    mc = cfg["mc"]
    checks = []
    for i, c in enumerate(cfg["checks"]):
        for k in ("name", "kind", "tolerance"):
            if k not in c:
                raise ConfigError(f"checks[{i}].{k}", "missing")
        checks.append(_build(f"checks[{i}]", lambda c=c: CheckSpec(
            name=str(c["name"]), kind=str(c["kind"]), tolerance=float(c["tolerance"]),
            tau=float(c.get("tau", 1.0)))))
    return _build("mc", lambda: ExperimentConfig(
        params=params, spec=spec, sim=sim, reps=int(mc["reps"]), workers=int(mc["workers"]),
        master_seed=int(mc["master_seed"]), tau_grid=tuple(mc["tau_grid"]),
        estimator=str(mc["estimator"]), norm=str(cfg["estimator"]["norm"]),
        grid_size=int(mc["grid_size"]), prelim_at_truth=bool(mc["prelim_at_truth"]),
        checks=tuple(checks)))
