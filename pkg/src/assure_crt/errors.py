"""Exception hierarchy shared by every module."""


class AssureError(Exception):
    """Base class for all package errors."""


class InvalidDesignError(AssureError, ValueError):
    pass


class InvalidParameterError(AssureError, ValueError):
    pass


class InvalidPriorError(AssureError, ValueError):
    pass


class InvalidDataError(AssureError, ValueError):
    pass


class MissingDataError(AssureError, ValueError):
    pass


class NumericalError(AssureError, ArithmeticError):
    """Raised when a chain produces non-finite values.

    Attributes:
        diagnostic: dict with the iteration and chain state at failure.
    """

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}


class NotAchievableError(AssureError):
    """Raised when no candidate sample size reaches the target.

    Attributes:
        best: the largest assurance / power / probability seen during the search.
    """

    def __init__(self, message, best=float("nan")):
        super().__init__(message)
        self.best = best


class ConfigError(AssureError, ValueError):
    """Invalid run configuration; message carries file and line when known."""
