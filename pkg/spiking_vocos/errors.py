from __future__ import annotations


class SvocError(Exception):
    """Base class for every error raised by the vocoder engine."""


class InvalidInput(SvocError, ValueError):
    """Raised when an argument violates an operation's preconditions."""


class InvalidConfig(SvocError, ValueError):
    """Raised when a configuration value is missing, malformed or inconsistent."""


class InvalidState(SvocError):
    """Raised when an operation is invoked on an object in the wrong state."""


class NumericalError(SvocError, ArithmeticError):
    """Raised when NaN/inf values appear or a computation degenerates."""


class IoError(SvocError):
    """Base class for file format and file content problems."""


class UnsupportedFormat(IoError):
    """Raised when an audio file uses a layout the engine does not read."""


class SampleRateMismatch(IoError):
    """Raised when audio does not use the sample rate the pipeline requires."""


class CorruptCheckpoint(IoError):
    """Raised when a checkpoint container cannot be decoded."""


class InvalidCheckpoint(IoError):
    """Raised when a decoded checkpoint disagrees with its own config."""
