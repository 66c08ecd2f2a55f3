"""Shallow versus hierarchical function approximation laboratory."""

__version__ = "0.1.0"

from .errors import (
    CompoLabError,
    ConfigError,
    DegenerateInputError,
    DivergenceError,
    DomainError,
    NumericalError,
    ResourceError,
    SingularSystemError,
)

__all__ = [
    "__version__",
    "CompoLabError",
    "ConfigError",
    "DegenerateInputError",
    "DivergenceError",
    "DomainError",
    "NumericalError",
    "ResourceError",
    "SingularSystemError",
]
