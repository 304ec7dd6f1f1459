"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a structural precondition (shape, symmetry, sign)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or broke a PSD guarantee."""
