"""Exception hierarchy shared by every module."""


class TailRegError(Exception):
    """Base class for all package errors."""


class InvalidInputError(TailRegError, ValueError):
    """Raised when an argument violates a documented precondition."""


class InvalidConfigError(InvalidInputError):
    """Raised for unusable fitting / cross-validation / simulation settings."""


class InsufficientTailDataError(InvalidInputError):
    """Raised when too few exceedances remain to identify the model."""


class FitFailureError(TailRegError, RuntimeError):
    """Raised when every optimizer start diverged or stayed infeasible.

    Attributes
    ----------
    diagnostics : list of dict
        One entry per attempted start.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = list(diagnostics or [])
