"""Exception taxonomy shared across the package.

Numeric routines raise subclasses of :class:`AkcsError` so callers (and the
CLI) can map failures onto a small set of outcomes: bad usage, bad data,
or a numeric breakdown mid-computation.
"""


class AkcsError(Exception):
    """Base class for all package errors."""


class ShapeError(AkcsError, ValueError):
    """Operands have incompatible or unexpected shapes."""


class InvalidDimensionError(AkcsError, ValueError):
    """A dimension is zero/negative or a ratio is out of its valid range."""


class SizeBudgetError(AkcsError, ValueError):
    """A materialized result would exceed the element budget."""


class DegenerateColumnError(AkcsError, ValueError):
    """A matrix column is identically zero where a nonzero one is required."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"column {index} has zero norm")


class UndefinedCoherenceError(AkcsError, ValueError):
    """Mutual coherence requested for a matrix with fewer than two columns."""


class NumericOverflowError(AkcsError, ArithmeticError):
    """A computation produced NaN or infinite values."""


class DivergenceError(AkcsError, ArithmeticError):
    """Iterative reconstruction diverged; carries the trace up to failure."""

    def __init__(self, message: str, trace=None):
        self.trace = trace
        super().__init__(message)


class PgmError(AkcsError, ValueError):
    """Malformed PGM file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
