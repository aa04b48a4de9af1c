"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shape is inconsistent with the operator layout."""


class ParameterError(ValueError):
    """A configuration value is outside its admissible range."""


class NumericalError(RuntimeError):
    """A numerical invariant was violated (breakdown, loss of positivity)."""


class InstabilityError(NumericalError):
    """Time integration produced non-finite values."""


class LinesearchError(NumericalError):
    """The search direction handed to the linesearch is not a descent direction."""


class IntegrityError(RuntimeError):
    """Stored problem data does not match what its recipe regenerates."""
