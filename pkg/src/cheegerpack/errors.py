"""Exception hierarchy shared by all modules."""


class CheegerError(Exception):
    """Base class for all package errors."""


class ConfigError(CheegerError, ValueError):
    """Invalid user input: grid specification, boundary condition, config file."""


class NumericalError(CheegerError, RuntimeError):
    """A numerical procedure failed to produce a trustworthy result."""


class ConvergenceError(NumericalError):
    """Iterative solver did not converge within its budget.

    Attributes
    ----------
    residuals : sequence of float or None
        Residuals achieved when the solver gave up, if available.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class NodalError(NumericalError):
    """Nodal decomposition is impossible (function vanishes identically)."""


class EmptyAdmissibleSetError(NumericalError):
    """No admissible level was found at the sweep resolution."""

    def __init__(self, message, min_ratio=None):
        super().__init__(message)
        self.min_ratio = min_ratio


class CertificateError(NumericalError):
    """A computed certificate inequality was violated."""
