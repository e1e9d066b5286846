"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class NumericFailureError(ArithmeticError):
    """A loss, gradient or update produced a non-finite value."""

    def __init__(self, message, where=None):
        super().__init__(message if where is None else f"{message} [{where}]")
        self.where = where


class DegenerateFactorError(NumericFailureError):
    """A factor column collapsed to (numerically) zero norm."""


class NonCoerciveProblemError(ValueError):
    """The diffusion coefficient cannot be certified strictly positive."""
