"""Exception hierarchy shared by every module."""


class MGTError(Exception):
    """Base class for all errors raised by wdmgt."""


class InvalidParameter(MGTError, ValueError):
    pass


class NormUndefined(MGTError, ValueError):
    pass


class BoxTooSmall(MGTError, ValueError):
    pass


class ShapeMismatch(MGTError, ValueError):
    pass


class InvalidSymbol(MGTError, ValueError):
    pass


class NonConvergence(MGTError, ArithmeticError):
    pass


class WrongZone(MGTError, ValueError):
    pass


class FitUnstable(MGTError, ArithmeticError):
    pass


class BranchCollision(MGTError, ArithmeticError):
    def __init__(self, message, index=None, branches=None):
        super().__init__(message)
        self.index = index
        self.branches = branches


class DegenerateUnresolved(MGTError, ArithmeticError):
    pass


class ZoneViolation(MGTError, ValueError):
    pass


class RegimeError(MGTError, ValueError):
    """Operation requires a different delta regime."""


class BlowUpDetected(MGTError, ArithmeticError):
    def __init__(self, message, t=None, ratio=None):
        super().__init__(message)
        self.t = t
        self.ratio = ratio


class MissingTrajectory(MGTError, ValueError):
    pass


class InsufficientData(MGTError, ValueError):
    pass


class NonPositiveValue(MGTError, ValueError):
    pass


class ConfigError(MGTError, ValueError):
    pass
