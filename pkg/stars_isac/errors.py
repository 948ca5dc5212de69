"""
Exception hierarchy for the library.

Every error raised on purpose derives from StarsIsacError, so the CLI and
the HTTP service can translate them in one place.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .models import SolveReport


class StarsIsacError(Exception):
    """Base class for all library errors."""


class ConfigError(StarsIsacError):
    """Invalid configuration value, file or interval bounds."""


class GeometryError(StarsIsacError):
    """A position or range outside the model's domain."""


class DegeneratePositionError(GeometryError):
    """Position on an axis where the Cartesian transform is singular."""


class UnobservableError(StarsIsacError):
    """Singular Fisher information: the position cannot be estimated."""

    def __init__(self, message: str, condition: float = float("inf")):
        super().__init__(f"{message} (condition number {condition:.3e})")
        self.condition = condition


class SolverError(StarsIsacError):
    """The conic backend did not return an optimal point."""

    def __init__(self, message: str, report: "SolveReport | None" = None):
        super().__init__(message)
        self.report = report


class InfeasibleError(SolverError):
    """Problem infeasible; `best_value` holds the best achievable value if known."""

    def __init__(self, message: str, report: "SolveReport | None" = None,
                 best_value: float | None = None):
        super().__init__(message, report)
        self.best_value = best_value


class DegenerateChannelError(StarsIsacError):
    """Equivalent user channel carries no energy through the covariance."""


class ExtractionRefusedError(StarsIsacError):
    """Coefficient matrices are too far from rank one to extract vectors."""

    def __init__(self, penalty: float, tolerance: float):
        super().__init__(f"penalty {penalty:.3e} exceeds extraction tolerance {tolerance:.1e}")
        self.penalty = penalty


class OracleStepError(StarsIsacError):
    """Finite-difference estimate failed its Richardson consistency check."""
