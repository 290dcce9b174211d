"""Monte Carlo oracle for ``E_x[e^{-alpha H} v(X_H)]``.

Paths are simulated jump by jump: between consecutive Poisson epochs the
Brownian part is a +/-1 random walk with ``steps_per_interarrival`` steps of size
``sigma sqrt(dt)``, and the walk's endpoint is drawn exactly as a shifted binomial.
The last, truncated interval before the horizon gets its own ``dt`` so the path
is sampled exactly at the horizon.

Randomness comes in fixed-size blocks of paths, each with a generator seeded from
``(seed, block index)``; estimates are therefore identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .recursion import CoefficientSet, evaluate_many

Z95 = 1.959963984540054


@dataclass(frozen=True)
class ErlangHorizon:
    shape: int
    rate: float

    def sample(self, rng, size):
        return rng.gamma(self.shape, 1.0 / self.rate, size)


@dataclass(frozen=True)
class ConstantHorizon:
    delta: float

    def sample(self, rng, size):
        return np.full(size, float(self.delta))


@dataclass(frozen=True)
class SimulationConfig:
    paths: int
    horizon: ErlangHorizon | ConstantHorizon
    seed: int = 0
    steps_per_interarrival: int = 100
    increments: str = "random_walk"  # or "gaussian"
    block_size: int = 1 << 16

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.steps_per_interarrival < 1:
            raise ValueError("steps_per_interarrival must be >= 1")
        if self.increments not in ("random_walk", "gaussian"):
            raise ValueError(f"unknown increments {self.increments!r}")


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    ci_low: float
    ci_high: float
    paths_used: int

    @property
    def half_width(self):
        return self.ci_high - self.mean

    def contains(self, value):
        return self.ci_low <= value <= self.ci_high


def _exit_table(jumps):
    d = jumps.d
    rates = -np.diag(jumps.T)
    P = np.zeros((d, d + 1))
    P[:, :d] = jumps.T / rates[:, None]
    P[np.arange(d), np.arange(d)] = 0.0
    P[:, d] = jumps.t / rates
    return rates, np.cumsum(P, axis=1)


def sample_phase_type_many(jumps, rng, size):
    """Absorption times of ``size`` independent copies of the phase-type chain."""
    d = jumps.d
    rates, cum = _exit_table(jumps)
    init = np.append(jumps.alpha, max(0.0, 1.0 - jumps.alpha.sum()))
    state = rng.choice(d + 1, size=size, p=init / init.sum())
    out = np.zeros(size)
    active = np.flatnonzero(state < d)
    while active.size:
        s = state[active]
        out[active] += rng.exponential(1.0, active.size) / rates[s]
        u = rng.random(active.size)
        nxt = (u[:, None] > cum[s]).sum(axis=1)
        nxt = np.minimum(nxt, d)
        state[active] = nxt
        active = active[nxt < d]
    return out


def sample_phase_type(jumps, rng):
    """One absorption time: holding times ``Exp(-T_kk)``, jumps with ``T_kj / -T_kk``, exit with ``t_k / -T_kk``."""
    d = jumps.d
    rates, cum = _exit_table(jumps)
    init = np.append(jumps.alpha, max(0.0, 1.0 - jumps.alpha.sum()))
    k = rng.choice(d + 1, p=init / init.sum())
    total = 0.0
    while k < d:
        total += rng.exponential(1.0 / rates[k])
        k = min(int(np.searchsorted(cum[k], rng.random(), side="right")), d)
    return total


def _brownian(model, lengths, steps, rng, increments):
    if model.sigma == 0:
        return np.zeros(lengths.shape)
    if increments == "gaussian":
        return model.sigma * np.sqrt(lengths) * rng.standard_normal(lengths.shape)
    walk = 2.0 * rng.binomial(steps, 0.5, lengths.shape) - steps
    return model.sigma * np.sqrt(lengths / steps) * walk


def simulate_terminal_many(model, x0, horizons, steps_per_interarrival, rng, increments="random_walk"):
    """``X_H`` for each entry of ``horizons`` (one path per entry)."""
    horizons = np.asarray(horizons, dtype=float)
    x = np.full(horizons.shape, float(x0)) + model.drift_tilde * horizons
    elapsed = np.zeros(horizons.shape)
    active = np.arange(horizons.size)
    while active.size:
        if model.rho > 0:
            gap = rng.exponential(1.0 / model.rho, active.size)
        else:
            gap = np.full(active.size, np.inf)
        remaining = horizons[active] - elapsed[active]
        jumps_here = gap < remaining
        length = np.where(jumps_here, gap, remaining)
        x[active] += _brownian(model, length, steps_per_interarrival, rng, increments)
        hit = active[jumps_here]
        if hit.size:
            x[hit] -= sample_phase_type_many(model.jumps, rng, hit.size)
            elapsed[hit] += gap[jumps_here]
        active = hit
    return x


def simulate_terminal(model, x0, horizon_time, steps_per_interarrival, rng, increments="random_walk"):
    if horizon_time < 0:
        raise ValueError("horizon must be nonnegative")
    return float(
        simulate_terminal_many(model, x0, np.array([horizon_time]), steps_per_interarrival, rng, increments)[0]
    )


def _as_callable(value_fn):
    if isinstance(value_fn, CoefficientSet):
        return lambda xs: evaluate_many(value_fn, xs)
    return value_fn


def _block_moments(args):
    model, value_fn, x0, alpha_rate, config, block, count = args
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, block]))
    H = config.horizon.sample(rng, count)
    X = simulate_terminal_many(model, x0, H, config.steps_per_interarrival, rng, config.increments)
    f = _as_callable(value_fn)
    y = np.exp(-alpha_rate * H) * np.asarray(f(X), dtype=float)
    return math.fsum(y), math.fsum(y * y)


def estimate_expectation(model, value_fn, x0, alpha_rate, config, workers=1):
    """Mean and 95% normal confidence interval of ``e^{-alpha H} v(X_H)`` under ``P_{x0}``.

    ``value_fn`` is a :class:`CoefficientSet` or any vectorised callable.
    """
    n_blocks = -(-config.paths // config.block_size)
    jobs = []
    for b in range(n_blocks):
        count = min(config.block_size, config.paths - b * config.block_size)
        jobs.append((model, value_fn, x0, alpha_rate, config, b, count))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_moments, jobs))
    else:
        parts = [_block_moments(j) for j in jobs]
    n = config.paths
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / n
    var = max(0.0, (s2 - n * mean * mean) / (n - 1)) if n > 1 else 0.0
    stderr = math.sqrt(var / n)
    return Estimate(mean, stderr, mean - Z95 * stderr, mean + Z95 * stderr, n)
