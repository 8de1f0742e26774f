"""Exception types raised by the toolkit."""


class LLLPlasmaError(Exception):
    """Base class for all toolkit errors."""


class DomainError(LLLPlasmaError, ValueError):
    """An argument lies outside the domain of the operation."""


class GridMismatchError(LLLPlasmaError, ValueError):
    """Two measures live on incompatible radial grids."""


class MassError(LLLPlasmaError, ValueError):
    """A measure does not carry the total mass it declares."""


class SingularSupportError(LLLPlasmaError, ValueError):
    """Relative entropy requested for a measure not dominated by the reference."""


class ConvergenceError(LLLPlasmaError, RuntimeError):
    """An iterative solver exhausted its budget.

    ``history`` holds the residual of every iteration.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class ResourceError(LLLPlasmaError, MemoryError):
    """A requested computation exceeds the configured size budget."""


class UnboundedError(LLLPlasmaError, ValueError):
    """The energy is unbounded below for the given parameters (k = 0, omega < 0)."""


class UnsupportedError(LLLPlasmaError, NotImplementedError):
    """The operation is not available for these arguments."""


class IntegrityError(LLLPlasmaError, RuntimeError):
    """A numerical consistency check failed (e.g. sampled tail above its envelope)."""
