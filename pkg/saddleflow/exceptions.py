"""
Error hierarchy of the saddleflow app.

Every error carries the process exit code the management commands map it to:
2 for invalid model or configuration input, 3 for numerical failures and 1 for
results that contradict an asserted scientific property.
"""


class SaddleflowError(Exception):
    exit_code = 3

    def __init__(self, message='', **detail):
        super().__init__(message)
        self.detail = detail


class ModelError(SaddleflowError, ValueError):
    exit_code = 2


class EigendataError(ModelError):
    pass


class SymmetryViolation(ModelError):
    pass


class IdentityViolation(ModelError):
    pass


class NumericalError(SaddleflowError):
    exit_code = 3


class StepSizeUnderflow(NumericalError):
    pass


class Escaped(NumericalError):
    def __init__(self, message='', bound=None, t_exit=None, **detail):
        super().__init__(message, bound=bound, t_exit=t_exit, **detail)
        self.bound = bound
        self.t_exit = t_exit


class NoCrossing(NumericalError):
    def __init__(self, message='', t_max=None, **detail):
        super().__init__(message, t_max=t_max, **detail)
        self.t_max = t_max


class TangentialCrossing(NumericalError):
    pass


class NotContracting(NumericalError):
    def __init__(self, message='', ratio=None, **detail):
        super().__init__(message, ratio=ratio, **detail)
        self.ratio = ratio


class MaxIterExceeded(NumericalError):
    pass


class ChartSingular(NumericalError):
    pass


class NewtonDiverged(NumericalError):
    pass


class DegenerateJacobian(NumericalError):
    pass


class LeftDomain(NumericalError):
    pass


class WrongSide(NumericalError):
    pass


class ClosureFailure(NumericalError):
    pass


class NoOrbit(SaddleflowError):
    exit_code = 1


class CheckFailed(SaddleflowError):
    """A computed result contradicts the property a command asserts."""
    exit_code = 1


class ReportError(SaddleflowError):
    exit_code = 3
