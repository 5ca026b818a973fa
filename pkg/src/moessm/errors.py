"""Exception types shared across the package.

Every error raised on a user-facing path derives from MoessmError so callers
can catch one base class. Messages carry enough context (shapes, step index,
last estimate) to debug without re-running.
"""

from __future__ import annotations


class MoessmError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MoessmError, ValueError):
    """Shape, dtype, range, or precondition violation on an input."""


class NumericError(MoessmError, FloatingPointError):
    """NaN/Inf produced or detected during a computation.

    When raised from a scan, ``step`` is the first 0-based timestep whose
    output was nonfinite.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConvergenceError(MoessmError, RuntimeError):
    """Iterative routine exceeded its iteration cap.

    ``last_estimate`` carries the best value available when the cap hit, so
    diagnostics can still report it.
    """

    def __init__(self, message: str, last_estimate: float | None = None):
        super().__init__(message)
        self.last_estimate = last_estimate


class SizeLimitError(MoessmError, ValueError):
    """Request would materialize something too large to be intentional."""


class UnsupportedTransitionError(MoessmError, TypeError):
    """Operation does not support this transition structure."""
