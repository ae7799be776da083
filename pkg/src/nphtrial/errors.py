"""Exception types shared across the package."""


class NPHError(Exception):
    """Base class for package errors."""


class DataError(NPHError, ValueError):
    """Input data violates a precondition (empty arm, no events, bad file row)."""


class ConfigError(NPHError, ValueError):
    """Invalid run configuration."""


class NumericalError(NPHError, ArithmeticError):
    """A numerical procedure could not produce a usable answer."""


class DegenerateVarianceError(NumericalError):
    def __init__(self, msg="degenerate variance"):
        super().__init__(msg)


class ConvergenceError(NumericalError):
    def __init__(self, msg, last_iterate=None):
        super().__init__(msg)
        self.last_iterate = last_iterate
