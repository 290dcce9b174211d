"""Problem configuration: YAML (or JSON) with ``model``, ``problem``, ``numerics`` and ``outputs`` blocks.

Example::

    model:
      sigma: 0.2
      rho: 1.5
      gamma: 0.02            # or drift_tilde: 0.69
      jumps: {preset: exponential}
    problem: {K: 100, alpha_rate: -0.02, delta: 0.5, N: 5, M: 1}
    numerics:
      grid: {lo: 3.6, hi: 9.6, n: 201}
      mc: {paths: 1000000, seed: 0, m_list: [1, 2, 3, 4, 5], constant: true}
    outputs: {dir: out}

A ``summary.json`` written by ``solve`` is itself a valid configuration.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import presets
from .errors import ConfigError
from .model import LevyModel, PhaseTypeDistribution, calibrate_drift

_MODEL_KEYS = {"sigma", "rho", "gamma", "drift_tilde", "alpha_rate", "jumps"}
_PROBLEM_KEYS = {"K", "alpha_rate", "delta", "N", "M"}
_NUMERICS_KEYS = {"continuity_tol", "grid", "mc"}
_MC_KEYS = {"paths", "seed", "steps_per_interarrival", "increments", "m_list", "constant", "workers", "block_size"}

DEFAULT_NUMERICS = {
    "continuity_tol": 1e-4,
    "grid": None,
    "mc": {
        "paths": 1_000_000,
        "seed": 0,
        "steps_per_interarrival": 100,
        "increments": "random_walk",
        "m_list": [1, 2, 3, 4, 5],
        "constant": False,
        "workers": 1,
        "block_size": 1 << 16,
    },
}


@dataclass
class GridSpec:
    lo: float
    hi: float
    n: int

    def points(self):
        return np.linspace(self.lo, self.hi, self.n)


@dataclass
class ProblemConfig:
    model: LevyModel
    K: float
    alpha_rate: float
    delta: float
    N: int
    M: int
    continuity_tol: float = 1e-4
    grid: GridSpec | None = None
    mc: dict = field(default_factory=lambda: dict(DEFAULT_NUMERICS["mc"]))
    out_dir: Path = Path("out")
    raw: dict = field(default_factory=dict)

    def grid_points(self, thresholds):
        if self.grid is not None:
            return self.grid.points()
        lo = np.log(self.K) - 2.0
        hi = max(thresholds) + 2.0
        return np.linspace(lo, hi, 201)


def _check_keys(block, allowed, name):
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")


def _number(block, key, name, positive=False, integer=False):
    if key not in block:
        raise ConfigError(f"{name}.{key} is required")
    value = block[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name}.{key} must be a number, got {value!r}")
    if integer and int(value) != value:
        raise ConfigError(f"{name}.{key} must be an integer")
    if positive and not value > 0:
        raise ConfigError(f"{name}.{key} must be positive")
    return int(value) if integer else float(value)


def _jumps(block):
    if not isinstance(block, dict):
        raise ConfigError("model.jumps must be a mapping")
    if "preset" in block:
        _check_keys(block, {"preset"}, "model.jumps")
        try:
            return presets.jump_law(block["preset"])
        except KeyError as exc:
            raise ConfigError(str(exc)) from None
    _check_keys(block, {"alpha", "T", "normalize_alpha"}, "model.jumps")
    try:
        alpha = np.asarray(block["alpha"], dtype=float)
        T = np.asarray(block["T"], dtype=float)
        if block.get("normalize_alpha", False):
            return PhaseTypeDistribution.from_rounded(alpha, T)
        return PhaseTypeDistribution(alpha=alpha, T=T)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad phase-type law: {exc}") from None


def from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping")
    raw = copy.deepcopy({k: data[k] for k in ("model", "problem", "numerics", "outputs") if k in data})
    for key in ("model", "problem"):
        if not isinstance(raw.get(key), dict):
            raise ConfigError(f"missing block {key!r}")
    mdl, prob = raw["model"], raw["problem"]
    _check_keys(mdl, _MODEL_KEYS, "model")
    _check_keys(prob, _PROBLEM_KEYS, "problem")

    K = _number(prob, "K", "problem", positive=True)
    alpha_rate = _number(prob, "alpha_rate", "problem")
    delta = _number(prob, "delta", "problem", positive=True)
    N = _number(prob, "N", "problem", positive=True, integer=True)
    M = _number(prob, "M", "problem", positive=True, integer=True)

    sigma = _number(mdl, "sigma", "model")
    rho = _number(mdl, "rho", "model")
    if sigma < 0 or rho < 0:
        raise ConfigError("sigma and rho must be nonnegative")
    jumps = _jumps(mdl.get("jumps", {"preset": "exponential"}))
    if ("gamma" in mdl) == ("drift_tilde" in mdl):
        raise ConfigError("model needs exactly one of gamma / drift_tilde")
    if "gamma" in mdl:
        calib_rate = _number(mdl, "alpha_rate", "model") if "alpha_rate" in mdl else alpha_rate
        drift = calibrate_drift(sigma, rho, jumps, calib_rate, _number(mdl, "gamma", "model"))
    else:
        drift = _number(mdl, "drift_tilde", "model")
    model = LevyModel(drift_tilde=drift, sigma=sigma, rho=rho, jumps=jumps)

    num = raw.get("numerics") or {}
    _check_keys(num, _NUMERICS_KEYS, "numerics")
    tol = float(num.get("continuity_tol", DEFAULT_NUMERICS["continuity_tol"]))
    if not tol > 0:
        raise ConfigError("numerics.continuity_tol must be positive")
    grid = None
    if num.get("grid") is not None:
        g = num["grid"]
        _check_keys(g, {"lo", "hi", "n"}, "numerics.grid")
        grid = GridSpec(_number(g, "lo", "grid"), _number(g, "hi", "grid"), _number(g, "n", "grid", True, True))
        if not grid.lo < grid.hi:
            raise ConfigError("grid lo must be below hi")
    mc = dict(DEFAULT_NUMERICS["mc"])
    mc.update(num.get("mc") or {})
    _check_keys(mc, _MC_KEYS, "numerics.mc")
    if int(mc["paths"]) < 1 or int(mc["steps_per_interarrival"]) < 1:
        raise ConfigError("mc paths and steps must be positive")
    mc["m_list"] = [int(v) for v in mc["m_list"]]
    if any(v < 1 for v in mc["m_list"]):
        raise ConfigError("m_list entries must be positive")

    out = raw.get("outputs") or {}
    _check_keys(out, {"dir"}, "outputs")
    return ProblemConfig(
        model=model,
        K=K,
        alpha_rate=alpha_rate,
        delta=delta,
        N=N,
        M=M,
        continuity_tol=tol,
        grid=grid,
        mc=mc,
        out_dir=Path(out.get("dir", "out")),
        raw=raw,
    )


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return from_dict(data)


def parse_grid(text):
    try:
        lo, hi, n = text.split(":")
        grid = GridSpec(float(lo), float(hi), int(n))
    except ValueError:
        raise ConfigError(f"--grid expects lo:hi:n, got {text!r}") from None
    if not grid.lo < grid.hi or grid.n < 2:
        raise ConfigError("--grid needs lo < hi and n >= 2")
    return grid


def parse_m_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--m-list expects comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise ConfigError("--m-list needs positive integers")
    return values
