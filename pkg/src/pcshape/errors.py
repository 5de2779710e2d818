"""Exception and warning types raised across the package."""


class PCShapeError(Exception):
    """Base class for all package errors."""


# autodiff
class InvalidValue(PCShapeError, ValueError):
    pass


class DomainError(PCShapeError, ValueError):
    pass


class TapeMismatch(PCShapeError, ValueError):
    pass


# constellation
class UnsupportedOrder(PCShapeError, ValueError):
    pass


class DegenerateConstellation(PCShapeError, ValueError):
    pass


# distribution
class InfeasibleApproximation(PCShapeError, ValueError):
    pass


class DivisionByZeroProbability(PCShapeError, ZeroDivisionError):
    pass


class InvalidComposition(PCShapeError, ValueError):
    pass


# demappers
class GridTooNarrow(PCShapeError, ValueError):
    pass


# trainer
class OptimizerAbort(PCShapeError, FloatingPointError):
    pass


class TrainingAborted(PCShapeError, FloatingPointError):
    """Non-finite loss or gradient during training.

    ``snapshot`` holds epoch, batch and the offending node (if any).
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


# validation
class ConvergenceError(PCShapeError, RuntimeError):
    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class BoundaryWarning(UserWarning):
    pass


# cli
class ConfigError(PCShapeError, ValueError):
    def __init__(self, message, field=None, line=None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.field = field
        self.line = line
