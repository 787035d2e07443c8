"""Exception types shared across the package."""


class EvalignError(Exception):
    """Base class for all package errors."""


class ValidationError(EvalignError, ValueError):
    """Invalid input data (bad values, inconsistent dimensions, unsorted streams)."""


class ParseError(ValidationError):
    """Malformed file content. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientEventsError(EvalignError):
    """A window or region does not contain enough events for estimation."""


class ImuGapError(EvalignError):
    """IMU samples leave a coverage gap larger than the window span."""


class DegenerateFlowError(EvalignError):
    """Compensatory flow magnitude below the usable threshold."""
