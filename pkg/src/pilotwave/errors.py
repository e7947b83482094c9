"""Exception hierarchy.

Validation errors mean the caller handed us something inadmissible; numerical
errors mean a computation on admissible input could not be completed.
"""


class PilotwaveError(Exception):
    pass


class ValidationError(PilotwaveError, ValueError):
    pass


class NumericalError(PilotwaveError, ArithmeticError):
    pass


class NormViolation(ValidationError):
    pass


class DegenerateAB(ValidationError):
    pass


class NonPositive(ValidationError):
    pass


class BadDomain(ValidationError):
    pass


class OutOfBox(ValidationError):
    pass


class SlitSingularity(NumericalError):
    pass


class NodeEncountered(NumericalError):
    pass


class StencilFailure(NumericalError):
    pass


class StepUnderflow(NumericalError):
    pass


class FieldFailure(NumericalError):
    pass


class MaxStepsExceeded(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class GridTooCoarse(NumericalError):
    pass


class NoCrossingInBox(NumericalError):
    pass


class TooManyFailures(NumericalError):
    pass
