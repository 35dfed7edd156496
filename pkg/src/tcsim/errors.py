"""Exception types shared across the package."""


class TCSimError(Exception):
    """Base class for all package errors."""


class CapacityError(TCSimError):
    """Hilbert space or dense workspace exceeds the configured limit."""


class BasisMismatchError(TCSimError, ValueError):
    """Operands live on different truncated bases."""


class CutoffError(TCSimError, ValueError):
    """Fock truncation discards more probability mass than allowed."""


class ConvergenceError(TCSimError):
    """An iterative solver failed to reach its tolerance.

    ``diagnostics`` carries whatever the solver knew at the point of failure
    (time reached, last error estimate, best iterate, ...).
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class InsufficientDataError(TCSimError, ValueError):
    """Not enough samples or features for an analysis to be meaningful."""


class ConfigError(TCSimError, ValueError):
    """Configuration file violates the documented schema."""
