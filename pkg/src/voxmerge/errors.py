"""Exception types shared across the package."""


class VoxmergeError(Exception):
    """Base class for package errors."""


class FormatError(VoxmergeError, ValueError):
    """A file does not match its declared on-disk format."""


class DomainError(VoxmergeError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class StateError(VoxmergeError, RuntimeError):
    """An artifact is used before it has been trained or initialised."""


class GenerationError(VoxmergeError, RuntimeError):
    """Synthetic data could not be generated with the requested parameters."""

    def __init__(self, message, placed=None):
        super().__init__(message)
        self.placed = placed
