"""Exception hierarchy for vecal.

Every error carries the process exit code the CLI maps it to, so callers can
catch the broad ``VecalError`` and still report a categorised status.
"""

from __future__ import annotations

from typing import Optional


class VecalError(Exception):
    """Base class for all errors raised by vecal."""

    exit_code = 1


class UsageError(VecalError, ValueError):
    """Invalid command-line or configuration input."""

    exit_code = 2


class ArtifactIOError(VecalError, OSError):
    """Reading or writing an input/output file failed."""

    exit_code = 3

    def __init__(self, path, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ParseError(VecalError, ValueError):
    """A row of an input CSV could not be parsed."""

    exit_code = 4

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(VecalError, ValueError):
    exit_code = 4


class ValidationError(VecalError, ValueError):
    exit_code = 4


class DomainError(VecalError, ValueError):
    """An energy conversion was asked for an input outside its domain."""

    exit_code = 4


class RankDeficiencyError(VecalError, ArithmeticError):
    """The design matrix of a least-squares problem is rank deficient."""

    exit_code = 5

    def __init__(self, column: int, message: str = ""):
        super().__init__(message or f"design matrix is rank deficient at column {column}")
        self.column = column


class DegenerateTargetError(VecalError, ArithmeticError):
    exit_code = 5


class SolverError(VecalError, ArithmeticError):
    exit_code = 5


class InvariantViolation(VecalError, AssertionError):
    exit_code = 5
