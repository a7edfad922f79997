"""Exception types shared across the package."""

from __future__ import annotations


class StreamfillError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(StreamfillError):
    """A record could not be decoded from the input file."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class SchemaError(StreamfillError):
    """A record does not match the declared column layout."""


class IngestionError(StreamfillError):
    """The instance stream violates ordering or timing requirements."""


class ConfigurationError(StreamfillError):
    """A parameter value is outside its documented domain."""


class UndefinedMetricError(StreamfillError):
    """A metric, loss, or score has no defined value on this input."""


class TrainingDivergedError(StreamfillError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss
