"""Exception hierarchy shared by all modules."""


class IsncError(Exception):
    """Base class for package errors."""


class ConfigurationError(IsncError, ValueError):
    """Invalid parameters or experiment configuration."""


class DomainError(IsncError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class TopologyError(IsncError):
    """Topology failed validation; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


class CodingError(IsncError, ValueError):
    """Misuse of the coding layer (empty buffer, generation mismatch, ...)."""


class DecodeStateError(IsncError):
    """Extraction requested for a session that is not decodable yet."""


class SolverError(IsncError, ValueError):
    """Malformed optimization problem."""


class InfeasibleError(IsncError):
    """A problem that must be feasible turned out not to be."""
