"""Exception hierarchy shared by the library and the CLI.

The CLI maps :class:`ValidationError` to exit code 2 and
:class:`BudgetError` to exit code 3.
"""


class SandsolitonError(Exception):
    """Base class for all package errors."""


class ValidationError(SandsolitonError, ValueError):
    """An input violates a documented precondition."""


class DegenerateInputError(ValidationError):
    pass


class ShapeError(ValidationError):
    pass


class RangeError(ValidationError, IndexError):
    """A point, region or slice falls outside the data it refers to."""


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class WavePreconditionError(ValidationError):
    pass


class InternalConsistencyError(SandsolitonError, AssertionError):
    """A property guaranteed by theory failed at runtime (solver fault)."""


class BudgetError(SandsolitonError):
    """A stabilization or containment budget was exhausted."""


class BudgetExhaustedError(BudgetError):
    def __init__(self, message, diff_support=None):
        self.diff_support = diff_support
        super().__init__(message)


class NonContainmentError(BudgetError):
    pass
