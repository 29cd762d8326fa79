"""Typed error hierarchy shared across the engine.

Every error carries an ``exit_code`` so the CLI can map failures onto its
documented process exit codes: 2 for configuration problems, 3 for bad or
missing data, 4 for numerical failures.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class ConfigError(EngineError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class InvalidParams(ConfigError):
    """Caller-supplied parameters are out of range or infeasible."""


class KTooSmall(ConfigError):
    """An operation needs at least two prototypes per class."""


class DataError(EngineError):
    """Malformed, missing or inconsistent input data."""

    exit_code = 3


class InvariantViolation(DataError):
    """A domain object failed its structural invariants."""


class IoError(DataError):
    """File could not be read or written."""


class NotFound(DataError):
    """A requested record (e.g. image id) does not exist."""


class EmptyGroundTruth(DataError):
    """A ground-truth mask contains no foreground pixels."""


class FormatError(DataError):
    """Base class for binary container parse failures."""


class BadMagic(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(FormatError):
    """File version or feature flags are not supported by this reader."""


class CorruptHeader(FormatError):
    """Header checksum mismatch: the header bytes were altered."""


class TruncatedFile(FormatError):
    """File ends before the payload promised by its header."""


class DimMismatch(FormatError):
    """Header dimensions disagree with the payload or with each other."""


class NumericError(EngineError):
    """Base class for numerical failures."""

    exit_code = 4


class ZeroVector(NumericError):
    """A vector with (near-)zero norm reached a normalization point."""


class NumericalOverflow(NumericError):
    """A solver produced non-finite values despite stabilization."""


class DegenerateFeatures(NumericError):
    """Feature set has no usable variance (numerically rank zero)."""
