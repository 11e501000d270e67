"""Exception hierarchy.

Two families matter to callers: :class:`ValidationError` for malformed inputs
(bad shapes, unnormalized distributions, inconsistent logs) and
:class:`PreconditionError` for well-formed inputs that violate an estimator's
or formula's assumptions (support, positivity of divergences, weights).
The CLI maps them to exit codes 2 and 3.
"""


class OPEError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(OPEError, ValueError):
    pass


class PreconditionError(OPEError, ValueError):
    pass


class DimensionMismatchError(ValidationError):
    pass


class NonNormalizedPriorError(ValidationError):
    pass


class NonFiniteUtilityError(ValidationError):
    pass


class InvalidPolicyError(ValidationError):
    pass


class InvalidRecordError(ValidationError):
    pass


class PropensityMismatchError(ValidationError):
    pass


class RewardMismatchError(ValidationError):
    pass


class InvalidCountError(ValidationError):
    pass


class MixOutOfRangeError(ValidationError):
    pass


class EmptyGridError(ValidationError):
    pass


class SupportViolationError(PreconditionError):
    def __init__(self, message, x=None, y=None):
        super().__init__(message)
        self.x = x
        self.y = y


class MissingPolicyError(PreconditionError):
    pass


class ZeroAveragePropensityError(PreconditionError):
    pass


class ZeroDivergenceError(PreconditionError):
    pass


class ZeroDivergenceEstimateError(ZeroDivergenceError):
    pass


class InvalidWeightsError(PreconditionError):
    pass


class LengthMismatchError(PreconditionError):
    pass


class EmptyDatasetError(PreconditionError):
    pass


class InsufficientSamplesError(PreconditionError):
    pass


class UnknownLoggerError(PreconditionError):
    pass


class EmptyKeepSetError(PreconditionError):
    pass


class NegativeRowMassError(PreconditionError):
    pass


class InternalConsistencyError(OPEError, ArithmeticError):
    """A computed quantity left its mathematically admissible range."""
