"""Exception types raised across the package."""


class MFTuneError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MFTuneError, ValueError):
    """An argument violates a documented precondition."""


class FactorizationError(MFTuneError, ArithmeticError):
    """A covariance matrix could not be factorized, even after jitter."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class PreconditionError(InvalidInputError):
    """A numerical precondition of a bound or identity does not hold."""


class InconsistencyError(MFTuneError, RuntimeError):
    """Computed quantities contradict each other (e.g. a wrong optimum)."""
