"""Exception hierarchy.

Every error raised by the solver derives from :class:`SolverError`. The CLI maps
the three families below onto exit codes (2 config, 3 assumption, 4 numerical).
"""


class SolverError(Exception):
    """Base class for all solver errors."""

    exit_code = 4


class ConfigError(SolverError, ValueError):
    exit_code = 2


class AssumptionViolated(SolverError):
    """A modelling assumption required for a finite, nontrivial value fails."""

    exit_code = 3

    def __init__(self, clause, message):
        super().__init__(f"[{clause}] {message}")
        self.clause = clause


class NumericalError(SolverError):
    exit_code = 4


class SingularResolvent(NumericalError):
    pass


class NoRoot(NumericalError):
    pass


class RootMultiplicity(NumericalError):
    pass


class CountMismatch(NumericalError):
    pass


class ImaginaryResidue(NumericalError):
    pass


class DomainError(NumericalError, ValueError):
    pass


class PreconditionViolated(NumericalError):
    pass


class NoBracket(NumericalError):
    pass


class MonotonicityViolation(NumericalError):
    pass


class PrecisionBreakdown(NumericalError):
    """Double precision can no longer represent the value function faithfully.

    Raised when a freshly computed coefficient set is visibly discontinuous at one
    of its thresholds. ``stage`` and ``substep`` locate the failing step.
    """

    def __init__(self, message, stage=None, substep=None, residual=None):
        super().__init__(message)
        self.stage = stage
        self.substep = substep
        self.residual = residual
