"""Shared exception types."""


class SketchLdmError(Exception):
    """Base class for all package errors."""


class InvalidInputError(SketchLdmError, ValueError):
    """Raised when user-supplied data violates an operation's preconditions."""


class ConfigurationError(SketchLdmError, ValueError):
    """Raised when a config value or shape contract is violated."""


class NumericalError(SketchLdmError, ArithmeticError):
    """Raised when a computation leaves its numerical domain (NaN loss, non-PSD covariance)."""


class AdapterUnavailableError(SketchLdmError, RuntimeError):
    """Raised when an external encoder is requested but cannot be loaded."""
