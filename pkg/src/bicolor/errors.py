"""Exception types shared across the package."""
from __future__ import annotations


class ContractError(ValueError):
    """An operation was called with arguments violating its contract."""


class ParseError(ValueError):
    """A malformed input line; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ConvexityError(ArithmeticError):
    """A quantity that must be nonnegative for convex functions came out negative."""


class PowerIterationError(RuntimeError):
    """Power iteration failed to converge; carries the last eigenvalue estimate."""

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


class ReferenceSolveError(RuntimeError):
    """The reference solver hit its iteration cap; carries the achieved residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class InvariantError(RuntimeError):
    """A state invariant was violated beyond tolerance; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class SweepError(RuntimeError):
    """All stepsize candidates diverged; carries per-candidate evidence."""

    def __init__(self, message: str, evidence: dict):
        super().__init__(message)
        self.evidence = evidence
