"""Exception hierarchy shared by the library and the command line."""
from __future__ import annotations


class DSPError(RuntimeError):
    """Base class. ``exit_code`` is what ``dsp.cli`` returns for this failure."""

    exit_code = 2


class ConfigurationError(DSPError):
    exit_code = 1


class UsageError(DSPError):
    exit_code = 1


class ShapeError(DSPError, ValueError):
    exit_code = 2


class IndexOutOfRange(DSPError, IndexError):
    exit_code = 2


class StateError(DSPError):
    exit_code = 2


class ParseError(DSPError):
    exit_code = 2

    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(ParseError):
    pass


class ValidationError(DSPError):
    exit_code = 2


class NumericError(DSPError):
    exit_code = 3

    def __init__(self, message: str, *, index: int | None = None) -> None:
        self.index = index
        super().__init__(message)


__all__ = [
    "DSPError",
    "ConfigurationError",
    "UsageError",
    "ShapeError",
    "IndexOutOfRange",
    "StateError",
    "ParseError",
    "CheckpointError",
    "ValidationError",
    "NumericError",
]
