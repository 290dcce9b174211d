import math

import numpy as np
import pytest

from conftest import case_model
from refracted_stopping import presets
from refracted_stopping.model import LevyModel, laplace_exponent
from refracted_stopping.simulation import (
    ConstantHorizon,
    ErlangHorizon,
    SimulationConfig,
    estimate_expectation,
    sample_phase_type,
    sample_phase_type_many,
    simulate_terminal,
    simulate_terminal_many,
)


class TestPhaseTypeSampling:
    @pytest.mark.parametrize("name", presets.JUMP_LAWS)
    def test_sample_mean(self, name):
        law = presets.jump_law(name)
        draws = sample_phase_type_many(law, np.random.default_rng(1), 200_000)
        se = draws.std() / math.sqrt(draws.size)
        assert abs(draws.mean() - law.mean()) < 4 * se

    def test_exponential_tail(self):
        draws = sample_phase_type_many(presets.jump_law("exponential"), np.random.default_rng(2), 200_000)
        assert np.mean(draws > 1.0) == pytest.approx(math.exp(-1.0), abs=4e-3)

    def test_laplace_transform(self):
        law = presets.jump_law("weibull")
        draws = sample_phase_type_many(law, np.random.default_rng(3), 200_000)
        assert np.mean(np.exp(-draws)) == pytest.approx(law.laplace_transform(1.0), abs=3e-3)

    def test_scalar_sampler(self):
        law = presets.jump_law("folded_normal")
        rng = np.random.default_rng(4)
        draws = np.array([sample_phase_type(law, rng) for _ in range(20_000)])
        assert draws.min() > 0
        assert abs(draws.mean() - law.mean()) < 4 * draws.std() / math.sqrt(draws.size)


class TestPaths:
    def test_brownian_variance(self):
        # no jumps: X_1 - x0 - c has variance sigma^2
        jumps = presets.jump_law("exponential")
        m = LevyModel(0.3, 0.2, 0.0, jumps)
        x = simulate_terminal_many(m, 0.0, np.ones(200_000), 100, np.random.default_rng(5))
        assert x.mean() == pytest.approx(0.3, abs=2e-3)
        assert x.var() == pytest.approx(0.04, rel=2e-2)

    @pytest.mark.parametrize("increments", ["random_walk", "gaussian"])
    def test_exponential_moment(self, increments):
        m = case_model(3, 0.02)
        x = simulate_terminal_many(m, 0.0, np.ones(400_000), 100, np.random.default_rng(6), increments)
        y = np.exp(x)
        assert y.mean() == pytest.approx(math.exp(laplace_exponent(m, 1.0)), abs=4 * y.std() / math.sqrt(y.size))

    @pytest.mark.parametrize("case", [1, 2, 3])
    def test_calibrated_martingale(self, case):
        # calibration makes e^{-(alpha - gamma) t + X_t - x0} a martingale
        m = case_model(case, 0.05)
        x = simulate_terminal_many(m, 0.0, np.ones(200_000), 100, np.random.default_rng(10 + case))
        y = np.exp(-(presets.ALPHA_RATE - 0.05) + x)
        assert abs(y.mean() - 1.0) < 3 * y.std() / math.sqrt(y.size)

    def test_discounted_martingale(self):
        # e^{-psi(s) t + s X_t} has mean e^{s x0}
        m = case_model(1, 0.1)
        s, t = 2.0, 0.7
        x = simulate_terminal_many(m, 0.5, np.full(400_000, t), 100, np.random.default_rng(7))
        y = np.exp(s * x - laplace_exponent(m, s) * t)
        assert y.mean() == pytest.approx(math.exp(s * 0.5), abs=4 * y.std() / math.sqrt(y.size))

    def test_zero_horizon(self):
        m = case_model(1, 0.02)
        assert simulate_terminal(m, 1.25, 0.0, 100, np.random.default_rng(8)) == 1.25
        with pytest.raises(ValueError):
            simulate_terminal(m, 1.25, -1.0, 100, np.random.default_rng(8))


class TestEstimator:
    def test_zero_value_function(self):
        cfg = SimulationConfig(10_000, ErlangHorizon(2, 4.0), seed=1)
        est = estimate_expectation(case_model(1, 0.02), lambda xs: np.zeros_like(xs), 0.0, -0.02, cfg)
        assert est.mean == 0.0 and est.ci_low == 0.0 and est.ci_high == 0.0

    def test_constant_value_function_discounting(self):
        # E[e^{-alpha H}] for H ~ Erlang(M, lam) is (lam / (lam + alpha))^M
        cfg = SimulationConfig(200_000, ErlangHorizon(3, 6.0), seed=2)
        est = estimate_expectation(case_model(1, 0.02), lambda xs: np.ones_like(xs), 0.0, -0.02, cfg)
        assert est.contains((6.0 / 5.98) ** 3)
        cfg = SimulationConfig(1000, ConstantHorizon(0.5), seed=2)
        est = estimate_expectation(case_model(1, 0.02), lambda xs: np.ones_like(xs), 0.0, -0.02, cfg)
        assert est.mean == pytest.approx(math.exp(0.01), rel=1e-14)

    def test_deterministic_under_seed_and_workers(self):
        m = case_model(2, 0.02)
        cfg = SimulationConfig(30_000, ErlangHorizon(1, 2.0), seed=42, block_size=8192)
        f = lambda xs: np.maximum(np.exp(xs) - 100.0, 0.0)
        a = estimate_expectation(m, f, 4.7, -0.02, cfg)
        b = estimate_expectation(m, f, 4.7, -0.02, cfg)
        c = estimate_expectation(m, np.exp, 4.7, -0.02, cfg, workers=2)
        d = estimate_expectation(m, np.exp, 4.7, -0.02, cfg, workers=1)
        assert a == b
        assert c == d

    def test_ci_shrinks_like_inverse_root(self):
        m = case_model(1, 0.02)
        f = lambda xs: np.exp(xs)
        small = estimate_expectation(m, f, 0.0, -0.02, SimulationConfig(10_000, ErlangHorizon(1, 2.0), seed=3))
        large = estimate_expectation(m, f, 0.0, -0.02, SimulationConfig(1_000_000, ErlangHorizon(1, 2.0), seed=3))
        assert large.half_width / small.half_width == pytest.approx(0.1, rel=0.2)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimulationConfig(0, ConstantHorizon(0.5))
        with pytest.raises(ValueError):
            SimulationConfig(10, ConstantHorizon(0.5), increments="levy")
        with pytest.raises(ValueError):
            SimulationConfig(10, ConstantHorizon(0.5), steps_per_interarrival=0)
