"""Exception hierarchy shared by all finstop modules."""


class FinstopError(Exception):
    """Base class for every error raised by finstop."""


class InputError(FinstopError, ValueError):
    """Arguments are malformed, out of range or inconsistent with a grid."""


class IntegrationBlowupError(FinstopError, ArithmeticError):
    """The one-step integrator produced non-finite values."""


class DegenerateAnsatzError(FinstopError):
    """The normalization matrix of a control ansatz is (numerically) singular."""


class ContractError(FinstopError):
    """A documented precondition linking two arguments is violated."""


class NumericalDegeneracyError(FinstopError, ArithmeticError):
    """A formula hit a vanishing denominator.

    The offending time is kept in ``location``.
    """

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class OverdampedError(InputError):
    """Oscillator parameters give an imaginary damped frequency."""


class DegenerateControlError(FinstopError):
    """A pairing used as a normalization constant vanishes."""


class DegenerateKernelError(FinstopError):
    """A kernel has zero mass and cannot be normalized."""


class ResolutionError(InputError):
    """A space-time grid is too coarse to resolve the front."""


class WindowError(InputError):
    """A transform window is too short for the requested support."""


class ExtractionUndefinedError(FinstopError):
    """The principal-branch attenuation formula is undefined (Re <= 0)."""


class InvalidKernelError(FinstopError):
    """A kernel fails both admissibility tests for an attenuation law."""


class BranchError(FinstopError):
    """A complex logarithm would cross its branch cut on the grid."""


class SingularPointError(InputError):
    """Evaluation requested at a singular point (e.g. the source location)."""
