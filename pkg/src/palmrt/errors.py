"""Exception types shared across the package."""


class PalmrtError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(PalmrtError, ValueError):
    """Raised when user-supplied data or configuration is unusable.

    Examples: non-finite values in a design matrix, shape mismatches,
    a CSV column that cannot be parsed, an empty dataset after
    missing-row deletion.  The CLI maps this to exit code 2.
    """


class InternalConsistencyError(PalmrtError, RuntimeError):
    """Raised when a quantity that is nonnegative by construction comes
    out negative beyond numerical tolerance.

    This signals a bug or catastrophic conditioning rather than bad user
    input.  The CLI maps this to exit code 3.
    """


class CalibrationError(PalmrtError, RuntimeError):
    """Raised when signal-strength calibration cannot bracket or reach
    the requested power target."""
