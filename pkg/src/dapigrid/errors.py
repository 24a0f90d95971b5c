"""Exception taxonomy and process exit codes.

Every error raised by the package derives from DapigridError so the CLI
can map failures onto its exit-code contract in one place.
"""

from __future__ import annotations

EXIT_PARSE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3
EXIT_NO_CONVERGENCE = 4


class DapigridError(Exception):
    """Base class for all package errors."""


class ScenarioParseError(DapigridError):
    """Input text could not be read as a scenario (malformed JSON, missing file)."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class ValidationError(DapigridError):
    """A semantically invalid value; ``field`` names the offending path."""

    def __init__(self, message: str, field: str | None = None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class TopologyError(ValidationError):
    """Graph-structure violation (disconnected network, bad endpoints)."""


class ParameterError(ValidationError):
    """Out-of-domain parameter or unmet call precondition."""


class NumericError(DapigridError):
    """Numerical failure: NaN states, step-size underflow, non-convergent
    eigensolve, or a certificate/spectrum disagreement."""

    def __init__(self, message: str, iterations: int | None = None):
        if iterations is not None:
            message = f"{message} (after {iterations} iterations)"
        super().__init__(message)
        self.iterations = iterations


class ConvergenceTimeout(DapigridError):
    """Steady-state search exhausted its horizon without settling."""

    def __init__(self, message: str, time: float | None = None, residual: float | None = None):
        if time is not None:
            message = f"{message} (t = {time:g} s, residual = {residual:.3e})"
        super().__init__(message)
        self.time = time
        self.residual = residual


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the CLI exit-code contract."""
    if isinstance(exc, ScenarioParseError):
        return EXIT_PARSE
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, ConvergenceTimeout):
        return EXIT_NO_CONVERGENCE
    return EXIT_NUMERIC
