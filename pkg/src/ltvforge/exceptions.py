"""Exception hierarchy shared across the package.

The CLI maps each class onto an exit code, so raise the most specific one.
"""


class LTVForgeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(LTVForgeError, ValueError):
    """Invalid configuration: shapes, flags, unknown keys."""


class InputError(LTVForgeError, ValueError):
    """Data violates a domain constraint (negative label, bad index, ...)."""


class SchemaError(InputError):
    """Column names or kinds do not follow the expected layout."""


class ArtifactMismatchError(LTVForgeError):
    """A checkpoint and a dataset disagree on schema."""


class NumericalError(LTVForgeError, FloatingPointError):
    """A loss or activation became non-finite."""
