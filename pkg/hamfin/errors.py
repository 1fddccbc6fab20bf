"""Exception hierarchy shared by the numerical modules and the CLI."""

from typing import Optional


class HamfinError(Exception):
    """Base class for all hamfin errors."""

    exit_code: int = 1


class ParameterError(HamfinError, ValueError):
    """Invalid model, grid or payoff parameters."""

    exit_code = 1


class ConfigError(HamfinError):
    """Unreadable or incomplete run configuration."""

    exit_code = 1


class NumericalFailure(HamfinError, ArithmeticError):
    """A numerical procedure broke down."""

    exit_code = 2

    def __init__(self, message: str, step: Optional[int] = None):
        """Initialize the failure.

        Args:
            message: Human readable description
            step: Time step index at which the failure happened, if any
        """
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step


class GridRangeError(NumericalFailure):
    """Grid too wide or too coarse for a similarity transform."""


class DegenerateSystemError(HamfinError):
    """The two-field vacuum system is singular."""

    exit_code = 3


class ConstraintConflict(HamfinError):
    """The requested analysis contradicts the model parameters."""

    exit_code = 3
