"""Exception types shared across the package."""


class LodiagError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(LodiagError):
    """An argument violates a documented precondition (shape, sign, finiteness)."""


class NotPositiveDefinite(LodiagError):
    """A matrix required to be positive definite is not (numerically)."""


class InfeasibleConstraints(LodiagError):
    """The portfolio constraint system has no solution."""


class DegenerateReturns(LodiagError):
    """A return series has zero variance, so a Sharpe ratio is undefined."""


class SingularSampleCovariance(LodiagError):
    """The sample covariance matrix cannot be inverted for the plug-in estimator."""
