"""Exception types shared across the package."""

from __future__ import annotations


class ParameterError(ValueError):
    """Raised when a caller passes an argument outside its documented domain."""


class StateError(RuntimeError):
    """Raised when an operation needs state the object does not hold yet,
    e.g. asking for observations from an ensemble that was never observed."""


class DivergenceError(RuntimeError):
    """Raised when an iterate escapes the trust region or turns non-finite.

    Carries the trace accumulated so far so callers can inspect the blow-up.
    """

    def __init__(self, message: str, trace=None, iteration: int | None = None):
        super().__init__(message)
        self.trace = trace
        self.iteration = iteration
