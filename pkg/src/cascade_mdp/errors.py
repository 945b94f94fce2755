"""Exception hierarchy shared by every module of the package."""


class CascadeError(Exception):
    """Base class for all package errors."""


class IndexOutOfRange(CascadeError, IndexError):
    pass


class SelfLoop(CascadeError, ValueError):
    pass


class DimensionMismatch(CascadeError, ValueError):
    pass


class NegativeRate(CascadeError, ValueError):
    pass


class InvalidStep(CascadeError, ValueError):
    pass


class GeneratorInvalid(CascadeError, ValueError):
    pass


class ControlOutOfBounds(CascadeError, ValueError):
    pass


class BadState(CascadeError, IndexError):
    pass


class NonAdmissibleModel(CascadeError, ValueError):
    pass


class StepTooLarge(CascadeError, ArithmeticError):
    pass


class CustomPsiDimension(CascadeError, ValueError):
    pass


class TimeOutOfRange(CascadeError, ValueError):
    pass


class PreconditionNotMet(CascadeError, ValueError):
    pass


class Reducible(CascadeError, ValueError):
    pass


class SingularSolve(CascadeError, ArithmeticError):
    pass


class BoxViolation(CascadeError, ValueError):
    pass


class GridTooLarge(CascadeError, ValueError):
    pass


class EmptyInput(CascadeError, ValueError):
    pass


class BadKind(CascadeError, ValueError):
    pass


class ModelParseError(CascadeError, ValueError):
    """Malformed model file; carries an optional line/column location."""

    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class RateBoundOverflow(CascadeError, ArithmeticError):
    pass


class MaxIterations(CascadeError, ArithmeticError):
    pass
