"""Exception types raised across the package."""


class PandaError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PandaError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(PandaError, ValueError):
    pass


class BoundsError(PandaError, IndexError):
    pass


class SizeError(PandaError, ValueError):
    pass


class ShapeError(PandaError, ValueError):
    pass


class NumericError(PandaError, ArithmeticError):
    pass


class ConvergenceError(PandaError, RuntimeError):
    def __init__(self, message, residual):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


class UsageError(PandaError, RuntimeError):
    pass


class EmptySampleError(PandaError, ValueError):
    pass


class UndefinedCorrelationError(PandaError, ValueError):
    pass
