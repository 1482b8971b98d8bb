"""Error taxonomy shared across the package.

Every failure a caller can act on gets a dedicated class, so tests and the
CLI can distinguish bad input (config/domain/shape) from broken state.
"""


class GradlabError(Exception):
    """Base class for all package errors."""


class ShapeError(GradlabError, ValueError):
    """Operand dimensions are incompatible."""


class NumericError(GradlabError, ArithmeticError):
    """A computation produced a non-finite value."""


class DomainError(GradlabError, ValueError):
    """An argument is outside its documented domain."""


class StateError(GradlabError, RuntimeError):
    """An operation was called in the wrong lifecycle order."""


class FormatError(GradlabError, ValueError):
    """A file does not match its declared binary/textual format."""


class ConsistencyError(GradlabError, ValueError):
    """Two inputs that must agree do not (e.g. image/label counts)."""


class ConfigError(GradlabError, ValueError):
    """An experiment configuration is invalid."""
