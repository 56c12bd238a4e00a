"""Delay-minimizing distributed rate allocation with inter-session network coding."""

from .errors import (
    CodingError,
    ConfigurationError,
    DecodeStateError,
    DomainError,
    InfeasibleError,
    IsncError,
    SolverError,
    TopologyError,
)

__version__ = "0.1.0"

__all__ = [
    "CodingError",
    "ConfigurationError",
    "DecodeStateError",
    "DomainError",
    "InfeasibleError",
    "IsncError",
    "SolverError",
    "TopologyError",
    "__version__",
]
