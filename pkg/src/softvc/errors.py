"""Exception hierarchy shared across the toolkit."""


class SoftVCError(Exception):
    """Base class for all toolkit errors."""


class FormatError(SoftVCError, ValueError):
    """A file or byte stream does not follow the expected layout."""


class DataError(SoftVCError, ValueError):
    """Input data violates a precondition (shape, range, finiteness)."""


class ParseError(SoftVCError, ValueError):
    """A text input (manifest line, config entry) could not be parsed."""


class ConfigError(SoftVCError, ValueError):
    """A hyperparameter or configuration value is invalid."""
