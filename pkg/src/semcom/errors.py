"""Exception hierarchy shared across the package.

Every error raised on purpose derives from SemcomError so callers can
catch one base type.  The CLI maps subtrees to exit codes: ConfigError
to 2, DataError to 3, NumericalError to 4.
"""


class SemcomError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(SemcomError):
    """Bad or inconsistent configuration (unknown key, invalid value)."""


class DataError(SemcomError):
    """A dataset file is missing, malformed, or inconsistent."""


class BadMagicError(DataError):
    """Binary payload does not start with the expected magic number."""


class TruncatedPayloadError(DataError):
    """Binary payload is shorter than its header claims."""


class DimensionOverflowError(DataError):
    """Declared tensor dimensions exceed a sane bound for this package."""


class DegenerateInputError(SemcomError):
    """An input is degenerate (for example a zero vector cannot be
    power-normalized)."""


class NumericalError(SemcomError):
    """A computation produced non-finite values or otherwise diverged."""
