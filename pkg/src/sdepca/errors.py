"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
error classes onto process exit statuses without a lookup table.
"""


class SdepcaError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(SdepcaError, ValueError):
    """An input violates a documented precondition."""

    exit_code = 2


class ShapeError(ValidationError):
    """Array dimensions are inconsistent."""


class DomainError(ValidationError):
    """A parameter lies outside the domain of a formula (e.g. p < 2)."""


class UnsupportedError(ValidationError):
    """The operation is not defined for this kind of system."""


class DivergedError(SdepcaError, ArithmeticError):
    """A trajectory left the divergence ball.

    Attributes
    ----------
    step : int
        First grid index whose state exceeded the threshold or was nonfinite.
    path_id : int or None
        Path that diverged, when known.
    """

    exit_code = 3

    def __init__(self, step, path_id=None, message=None):
        self.step = int(step)
        self.path_id = path_id
        if message is None:
            message = f"trajectory diverged at step {self.step}"
            if path_id is not None:
                message += f" (path {path_id})"
        super().__init__(message)


class InsufficientDataError(SdepcaError):
    """Too few usable points to fit a decay rate."""

    exit_code = 4


class NoCertificateError(SdepcaError):
    """No stability certificate can be produced (e.g. nonpositive margin)."""

    exit_code = 5


class UnrepresentableCertificateError(SdepcaError):
    """The block count n_hat exceeds the configured integer range."""

    exit_code = 6


class MonotonicityError(SdepcaError):
    """The condition function was not monotone on the scan used for bisection.

    Attributes
    ----------
    scan : list of (float, float)
        The ``(log_tau, margin)`` table that failed the check.
    """

    exit_code = 7

    def __init__(self, message, scan):
        self.scan = list(scan)
        super().__init__(message)
