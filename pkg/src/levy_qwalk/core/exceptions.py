"""Custom exceptions for the quantum walk toolkit."""

from typing import Any


class WalkError(Exception):
    """Base exception for toolkit errors."""

    def __init__(self, message: str, details: dict[str, Any] | None = None) -> None:
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def __reduce__(self) -> tuple[type["WalkError"], tuple[str, dict[str, Any]]]:
        # Keep details when errors cross the worker pool boundary
        return (self.__class__, (self.message, self.details))


class ParameterDomainError(WalkError):
    """Raised when a parameter or input lies outside its valid domain."""

    pass


class CapacityError(WalkError):
    """Raised when the walker outgrows its preallocated position window."""

    pass


class ConsistencyError(WalkError):
    """Raised when a numerical consistency check fails."""

    pass


class ManifestError(WalkError):
    """Raised when an experiment manifest or output location is unusable."""

    pass


class InputFileError(WalkError):
    """Raised when run outputs needed for analysis are missing or malformed."""

    pass


class RealizationError(WalkError):
    """Raised when a single disorder realization fails inside an ensemble."""

    pass
