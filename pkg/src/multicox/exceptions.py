"""Exception types shared across the package."""


class NumericError(ArithmeticError):
    """Raised when a computation leaves the representable range (overflow, total underflow)."""


class EstimationError(RuntimeError):
    """Raised when fitting cannot proceed (divergent initialization, rank deficiency)."""


class ModelFileError(ValueError):
    """Raised when a model file is unreadable, has the wrong version, or violates invariants."""
