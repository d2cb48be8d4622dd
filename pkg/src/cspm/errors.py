"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration, shape, and file-format
problems exit 3; numeric failures exit 4. Keeping the hierarchy flat and
explicit lets callers distinguish "your inputs are wrong" from "the math
blew up" without string matching.
"""


class CspmError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(CspmError, ValueError):
    """Invalid configuration value, flag combination, or mismatched metadata."""


class ShapeError(CspmError, ValueError):
    """Array arguments with inconsistent or unsupported shapes."""


class NumericError(CspmError, ArithmeticError):
    """Non-finite values or other numeric failures during computation."""


class StateError(CspmError, RuntimeError):
    """Operation called out of order, e.g. backward before forward."""


class FormatError(CspmError, ValueError):
    """Base class for binary file-format violations."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class BadVersionError(FormatError):
    """File declares a format version this reader does not support."""


class TruncatedFileError(FormatError):
    """File ends before the declared payload is complete."""


class ChecksumError(FormatError):
    """Stored checksum does not match the payload."""
