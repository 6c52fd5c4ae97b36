"""Shared exception types. ``exit_code`` drives the CLI's failure classes."""


class SpoofbenchError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class FormatError(SpoofbenchError):
    """Malformed input file: bad header, field count, or unparseable value."""

    exit_code = 2


class ValidationError(SpoofbenchError):
    """Well-formed input that violates an operation's contract."""

    exit_code = 3


class ConfigError(SpoofbenchError):
    """Missing or inconsistent run configuration (e.g. absent model file)."""

    exit_code = 4


class DivergenceError(SpoofbenchError):
    """Numerical divergence (non-finite loss) during training."""

    exit_code = 5


class DomainError(ValidationError):
    """Value outside its mathematical domain (non-finite, out of bounds)."""


class RangeError(ValidationError):
    """Point beyond the small-area bound of the local tangent plane."""


class DegenerateGeometryError(ValidationError):
    """Zero-length segment where a heading is required."""
