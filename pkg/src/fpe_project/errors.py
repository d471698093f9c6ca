"""Exception hierarchy shared by all modules."""


class FpeProjectError(Exception):
    """Base class for every numeric or validation failure raised here."""

    #: name of the operation that failed, filled in where it is known
    operation: str = ""


class NumericFailure(FpeProjectError):
    pass


class InfeasibleTheta(NumericFailure):
    """The natural parameter lies outside the (numerically) feasible set."""


class QuadratureFailure(NumericFailure):
    pass


class NoDecay(QuadratureFailure):
    """The exponent of an integrand does not go to -inf within |x| <= 1e3."""


class SingularFisher(NumericFailure):
    pass


class NoConvergence(NumericFailure):
    pass


class StepUnderflow(NumericFailure):
    pass


class MassLoss(NumericFailure):
    pass


class Instability(NumericFailure):
    pass


class SupportMismatch(NumericFailure):
    pass


class NotEigen(NumericFailure):
    pass


class Overflow(NumericFailure):
    pass


class EscapedGrid(NumericFailure):
    pass


class ValidationError(FpeProjectError, ValueError):
    """Bad user input (configuration, empty inputs, shape mismatch)."""


class EmptyInput(ValidationError):
    pass
