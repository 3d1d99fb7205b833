# errors.py
from numpy.linalg import LinAlgError


class MvcarError(Exception):
    """Base class for every error raised by this package."""


class ParseError(MvcarError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{':'.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")


class ValidationError(MvcarError, ValueError):
    pass


class DomainError(ValidationError):
    pass


class NotPositiveDefinite(MvcarError, LinAlgError):
    pass


class ConstraintDegeneracy(MvcarError, LinAlgError):
    pass


class InvalidHyperparameters(MvcarError):
    """Raised when θ maps to an unusable model (non-PD Λ⁻¹, singular M, overflow).

    Inference treats it as a rejected point with log-density −∞.
    """


class InvalidState(MvcarError, ArithmeticError):
    pass


class OptimizationFailure(MvcarError):
    pass
