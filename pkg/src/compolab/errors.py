"""Exception hierarchy shared by every module."""


class CompoLabError(Exception):
    """Base class for all library errors."""


class ConfigError(CompoLabError, ValueError):
    """Invalid arguments, architecture descriptors or experiment configs."""


class DomainError(CompoLabError, ValueError):
    """Input outside the declared domain of a target."""


class DegenerateInputError(CompoLabError, ValueError):
    """Input that makes a quantity undefined (e.g. duplicate centers)."""


class ResourceError(CompoLabError, RuntimeError):
    """A request would exceed a configured size cap."""


class NumericalError(CompoLabError, ArithmeticError):
    """Non-finite values encountered during a computation."""

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class SingularSystemError(NumericalError):
    """Linear system is singular or numerically rank deficient."""


class DivergenceError(NumericalError):
    """Every training attempt diverged."""

    def __init__(self, message, reports=()):
        super().__init__(message)
        self.reports = list(reports)
