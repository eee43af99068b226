"""Semantic exception hierarchy shared by all modules."""


class RfensembleError(Exception):
    """Base class for all package errors."""


class ConfigError(RfensembleError, ValueError):
    """Invalid configuration (bad field values, unsupported combinations)."""


class DomainError(RfensembleError, ValueError):
    """Mathematical precondition violated (non-PSD covariance, sigma <= 0, ...)."""


class NumericalError(RfensembleError, RuntimeError):
    """Non-finite evaluation or failed linear algebra inside an operation."""


class ConvergenceError(NumericalError):
    """An iterative routine hit its iteration cap before reaching tolerance."""


class ResourceError(RfensembleError, RuntimeError):
    """A requested computation exceeds a configured size cap."""
