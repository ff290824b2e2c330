"""Exception types raised across the package."""


class FreqPhysError(Exception):
    """Base class for all package errors."""


class ConfigError(FreqPhysError, ValueError):
    """Invalid configuration, e.g. an empty physiological passband."""


class SymmetryError(FreqPhysError, ValueError):
    """A half spectrum whose inverse is not real within tolerance."""


class DegenerateSignalError(FreqPhysError, ValueError):
    """Zero-variance signal where a correlation is required."""


class InsufficientDataError(FreqPhysError, ValueError):
    """Too few beats (or samples) for the requested statistic."""


class FormatError(FreqPhysError, ValueError):
    """Malformed tensor, checkpoint or CSV file."""


class BadMagicError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class ParseError(FormatError):
    """CSV/config parse failure; carries the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
