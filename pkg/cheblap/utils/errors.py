from __future__ import annotations

from typing import Optional


class CheblapError(Exception):
    """Root of every error raised by cheblap"""

    pass


class NonFinite(CheblapError, ArithmeticError):
    """Raised when a matrix or gradient holds NaN or Inf"""

    pass


class DegenerateDegree(CheblapError, ValueError):
    """Raised in strict mode when a degree entry falls below the floor"""

    pass


class NotSymmetric(CheblapError, ValueError):
    """Raised when a matrix that must be symmetric is not"""

    pass


class DegenerateSpectrum(CheblapError, ArithmeticError):
    """Raised when lambda_max and lambda_min coincide"""

    pass


class InvalidOrder(CheblapError, ValueError):
    """Raised when a Chebyshev order is out of range"""

    pass


class MismatchedBasis(CheblapError, ValueError):
    """Raised when a basis is paired with a Laplacian it was not built from"""

    pass


class ShapeMismatch(CheblapError, ValueError):
    """Raised when array shapes disagree"""

    pass


class DivisionGuard(CheblapError, ArithmeticError):
    """Raised when a Jacobian denominator falls below the floor"""

    pass


class MismatchedTrace(CheblapError, ValueError):
    """Raised when a backward pass gets a trace from another forward"""

    pass


class InvalidLabel(CheblapError, ValueError):
    """Raised when a class id is outside [0, num_classes)"""

    pass


class DegenerateReference(CheblapError, ValueError):
    """Raised when the reference joints are collinear or coincident"""

    pass


class TooShort(CheblapError, ValueError):
    """Raised when a sequence has fewer frames than chunks"""

    pass


class IndexOutOfRange(CheblapError, IndexError):
    """Raised when an edge names a joint that does not exist"""

    pass


class ParseError(CheblapError, ValueError):
    """Raised when a text file cannot be parsed"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")


class MissingFile(CheblapError, FileNotFoundError):
    """Raised when a referenced file does not exist"""

    pass


class EmptySplit(CheblapError, ValueError):
    """Raised when evaluating on a split with no samples"""

    pass


class ConfigError(CheblapError, ValueError):
    """Raised when a configuration is missing keys or holds invalid values"""

    pass


class NumericalAbort(CheblapError, ArithmeticError):
    """Raised when training produces a non-finite loss or parameter"""

    def __init__(self, message: str, epoch: Optional[int] = None):
        self.epoch = epoch
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
