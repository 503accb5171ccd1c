"""Exception hierarchy shared across the package."""


class TuckerError(Exception):
    """Base class for all package errors."""


class DimensionError(TuckerError, ValueError):
    """Shapes of the operands do not agree."""


class DegenerateCoreError(TuckerError, ArithmeticError):
    """A core Gram matrix G_d G_d^T is not (numerically) positive definite."""


class RankDeficientError(TuckerError, ArithmeticError):
    """A matrix expected to have full column rank does not."""


class ConvergenceError(TuckerError, RuntimeError):
    """An iterative inner solver hit its iteration limit."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class LineSearchError(TuckerError, RuntimeError):
    """Backtracking exhausted its budget without sufficient decrease."""


class FormatError(TuckerError, ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
