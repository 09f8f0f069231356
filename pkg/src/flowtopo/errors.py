"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration/usage problems exit 2,
numeric failures exit 3, I/O and format problems exit 4.
"""


class FlowtopoError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FlowtopoError):
    """Bad argument values or shapes at a public API boundary."""


class UsageError(FlowtopoError):
    """API misuse, e.g. backward() on a tensor that is not a recorded scalar."""


class StateError(FlowtopoError):
    """Operation requires state that has not been populated (e.g. Z estimates)."""


class NumericError(FlowtopoError):
    """Non-finite values or singular systems encountered during computation."""


class ConfigError(FlowtopoError):
    """Config schema violation. `path` is the JSON path of the offending field."""

    def __init__(self, path, message):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}")


class ModelFormatError(FlowtopoError):
    """Model file cannot be read: unknown version, corruption, truncation."""


class TrainingAborted(NumericError):
    """Raised when a training step produces non-finite values.

    Carries the last-good parameter snapshot and the history recorded so far
    so callers can persist a usable checkpoint.
    """

    def __init__(self, message, history=None, step=None):
        self.history = history
        self.step = step
        super().__init__(message)
