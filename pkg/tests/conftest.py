import functools

import numpy as np
import pytest

from refracted_stopping import presets
from refracted_stopping.model import calibrated_model, phi, spectral_roots
from refracted_stopping.recursion import CoefficientSet, RegionCoefficients

CASES = {1: "exponential", 2: "weibull", 3: "folded_normal"}


@functools.lru_cache(maxsize=None)
def case_model(case, gamma):
    jumps = presets.jump_law(CASES[case])
    return calibrated_model(presets.SIGMA, presets.RHO, jumps, presets.ALPHA_RATE, gamma)


@functools.lru_cache(maxsize=None)
def case_spectrum(case, gamma, M):
    model = case_model(case, gamma)
    return spectral_roots(model, presets.ALPHA_RATE + M / presets.DELTA)


def random_coefficient_set(rng, case, gamma=0.02, M=1, n=None, I=None):
    """A random parameter set obeying the corner conditions, with real-valued regions.

    Coefficients are scaled so every term is of order one at its region's edge;
    ``C`` is conjugate-symmetric across conjugate root pairs.
    """
    spec = case_spectrum(case, gamma, M)
    model = case_model(case, gamma)
    phi_alpha = phi(model, presets.ALPHA_RATE)
    n = int(rng.integers(1, 3)) if n is None else n
    I = int(rng.integers(0, 4)) if I is None else I
    thresholds = tuple(sorted(rng.uniform(-1.0, 1.5, n), reverse=True))
    xi = spec.roots
    conj = np.array([int(np.argmin(np.abs(xi - z.conjugate()))) for z in xi])
    regions = []
    for l in range(1, n + 2):
        upper = thresholds[l - 2] if l >= 2 else thresholds[0] + 1.0
        lower = thresholds[l - 1] if l <= n else thresholds[-1] - 1.0
        A = B = E = 0.0
        C = np.zeros((xi.size, I + 1), complex)
        D = np.zeros(I + 1)
        if l <= n:
            A = rng.normal()
            B = rng.normal() * np.exp(-lower)
            C = (rng.normal(size=C.shape) + 1j * rng.normal(size=C.shape)) * np.exp(xi.real * lower)[:, None]
            C = 0.5 * (C + np.conj(C[conj]))
        if l >= 2:
            D = rng.normal(size=I + 1) * np.exp(-spec.phi_p * upper)
            E = rng.normal() * np.exp(-phi_alpha * upper)
        regions.append(RegionCoefficients(A, B, C, D, E))
    lam = M / presets.DELTA
    return CoefficientSet(n, 0, I, thresholds, tuple(regions), spec, phi_alpha, lam)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = []


@pytest.fixture
def record():
    """Record one acceptance line: ``record(number, title, ok, detail)``."""

    def _record(number, title, ok, detail=""):
        ACCEPTANCE.append((number, title, bool(ok), detail))
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] criterion {number:>2}: {title} | {detail}")
