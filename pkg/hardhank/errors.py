"""Exception types shared across the solver.

Precondition failures stay ``ValueError`` subclasses so callers can treat them
like any bad input; numerical failures are ``ArithmeticError`` subclasses so the
trainer can turn them into a reset instead of a crash.
"""
from typing import Optional


class HankError(Exception):
    """Base class for solver errors."""


class ConfigError(HankError, ValueError):
    """Unknown or invalid configuration entry."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class ProjectionSpecError(HankError, ValueError):
    """Bounds and target sum do not define a feasible projection problem."""


class NumericalError(HankError, ArithmeticError):
    """A computation produced a value the model cannot use."""


class NonFiniteError(NumericalError):
    """A tape primitive produced inf or nan."""

    def __init__(self, primitive: str):
        super().__init__(f"non-finite value produced by primitive '{primitive}'")
        self.primitive = primitive


class SimulationError(NumericalError):
    """Forward simulation produced non-finite states."""

    def __init__(self, period: int, detail: str = ""):
        message = f"non-finite state at period {period}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)
        self.period = period


class TrainingAborted(NumericalError):
    """Losses stayed non-finite after the reset budget was spent."""


__all__ = [
    "HankError",
    "ConfigError",
    "ProjectionSpecError",
    "NumericalError",
    "NonFiniteError",
    "SimulationError",
    "TrainingAborted",
]
