"""Exception hierarchy shared by every pvshade module."""


class PVShadeError(Exception):
    """Base class for all errors raised by pvshade."""


class ValidationError(PVShadeError, ValueError):
    """Invalid input data, parameters or configuration."""


class SchemaError(ValidationError):
    """A CSV file does not match the expected column schema."""


class NumericalError(PVShadeError, ArithmeticError):
    """A numerical procedure could not produce a result."""


class SolverError(NumericalError):
    """A bracketed root solve failed to converge or had no sign change."""


class SingularMatrixError(NumericalError):
    """The least-squares design matrix is rank deficient."""


class ConvergenceError(NumericalError):
    """An iterative fit hit its iteration cap.

    The last iterate is kept on ``coefficients`` so callers can inspect it.
    """

    def __init__(self, message, coefficients=None, intercept=None):
        super().__init__(message)
        self.coefficients = coefficients
        self.intercept = intercept


class FoldError(ValidationError):
    """A cross-validation fold could not be fitted or scored."""

    def __init__(self, fold, cause):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause
