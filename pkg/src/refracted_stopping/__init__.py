"""Multiple optimal stopping with a refraction period under spectrally negative
phase-type Levy models.

Thresholds and value functions come from an exact coefficient recursion on
piecewise exponential-polynomial functions; a Monte Carlo oracle checks them.
"""

from .errors import (
    AssumptionViolated,
    ConfigError,
    NumericalError,
    PrecisionBreakdown,
    SolverError,
)
from .model import (
    LevyModel,
    PhaseTypeDistribution,
    SpectralData,
    calibrate_drift,
    calibrated_model,
    laplace_exponent,
    phi,
    resolvent_density,
    scale_function,
    spectral_roots,
    validate_assumptions,
)
from .recursion import (
    CoefficientSet,
    advance_stage,
    base_case,
    erlang_expectation,
    evaluate,
    first_threshold,
    resolvent_step,
    solve,
    varpi,
)
from .simulation import ConstantHorizon, ErlangHorizon, SimulationConfig, estimate_expectation

__version__ = "0.1.0"

__all__ = [
    "AssumptionViolated",
    "ConfigError",
    "NumericalError",
    "PrecisionBreakdown",
    "SolverError",
    "LevyModel",
    "PhaseTypeDistribution",
    "SpectralData",
    "calibrate_drift",
    "calibrated_model",
    "laplace_exponent",
    "phi",
    "resolvent_density",
    "scale_function",
    "spectral_roots",
    "validate_assumptions",
    "CoefficientSet",
    "advance_stage",
    "base_case",
    "erlang_expectation",
    "evaluate",
    "first_threshold",
    "resolvent_step",
    "solve",
    "varpi",
    "ConstantHorizon",
    "ErlangHorizon",
    "SimulationConfig",
    "estimate_expectation",
]
