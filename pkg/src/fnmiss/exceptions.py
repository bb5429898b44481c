"""Exception hierarchy.

Every error raised deliberately by the package derives from :class:`FnmissError`.
Input problems additionally derive from :class:`ValueError`, numerical
failures of the nuisance fits from :class:`EstimationError`.
"""


class FnmissError(Exception):
    """Base class for all package errors."""


class ValidationError(FnmissError, ValueError):
    """Input data or arguments violate a documented contract."""


class SchemaError(ValidationError):
    """A text file does not follow the documented layout."""


class DimensionMismatch(ValidationError):
    pass


class NonBinaryIndicator(ValidationError):
    pass


class NonFiniteObservedOutcome(ValidationError):
    pass


class NonFiniteCovariate(ValidationError):
    pass


class TooFewObserved(ValidationError):
    pass


class LevelOutOfRange(ValidationError):
    pass


class BadPartition(ValidationError):
    pass


class ZeroVarianceDiagonal(ValidationError):
    pass


class NonPSD(ValidationError):
    pass


class EstimationError(FnmissError):
    """A nuisance fit or plug-in covariance could not be computed."""


class SingularDesign(EstimationError):
    pass


class InsufficientObserved(EstimationError):
    pass


class Separation(EstimationError):
    pass


class AllSameIndicator(EstimationError):
    pass


class SingularPi(EstimationError):
    pass


class FailureRateExceeded(FnmissError):
    """Too many Monte Carlo replicates failed to produce estimates."""
