"""Exception types shared across the package."""


class RerankkitError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(RerankkitError, ValueError):
    """An argument violates a documented precondition."""


class DataFormatError(RerankkitError):
    """A file failed to parse or its contents are inconsistent."""

    def __init__(self, message: str, path: str | None = None, offset: int | None = None):
        detail = message
        if path is not None:
            detail += f" [{path}]"
        if offset is not None:
            detail += f" (offset {offset})"
        super().__init__(detail)
        self.path = path
        self.offset = offset


class SolverFailureError(RerankkitError):
    """The restricted QP solver did not converge.

    Carries the last iterate so callers can still report partial results.
    """

    def __init__(self, message: str, theta=None, residual: float | None = None):
        super().__init__(message)
        self.theta = theta
        self.residual = residual


class SynthesisError(RerankkitError):
    """Synthetic-scene generation cannot satisfy the requested configuration."""
