"""Exception hierarchy shared by every module.

The CLI maps :class:`ValidationError` to exit status 2 and
:class:`NumericalError` to exit status 3.
"""


class DcrtError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(DcrtError, ValueError):
    """Input that violates a documented precondition."""


class NumericalError(DcrtError, ArithmeticError):
    """A well-formed input on which a numerical routine failed."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, grid_index=None):
        super().__init__(message)
        self.grid_index = grid_index
