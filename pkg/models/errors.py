"""
Exception hierarchy for the hedging library
"""


class HedgingError(Exception):
    """Base class for every error raised by the library."""


class InvalidParameters(HedgingError, ValueError):
    pass


class ConfigError(HedgingError):
    """A parameter, claim or experiment file is missing or malformed."""


class NonFiniteResult(HedgingError, ArithmeticError):
    """A closed-form evaluation overflowed; the point lies outside the usable domain."""


class DomainViolation(HedgingError):
    """A moment condition E[exp(uX_T)] < inf does not hold."""


class BranchJump(HedgingError):
    """The complex logarithm in phi jumped between neighbouring time points."""


class PoleError(HedgingError, ZeroDivisionError):
    pass


class NoValidStrip(HedgingError):
    pass


class QuadratureFailure(HedgingError):
    pass


class MaxIterations(HedgingError):
    pass


class RedundantAsset(HedgingError):
    """Schur complement of the candidate asset is below tolerance."""


class BudgetExceeded(HedgingError):
    pass


class NonConvergence(HedgingError):
    pass


class OracleDisagreement(HedgingError):
    """Analytic and Monte-Carlo values differ by more than the allowed z-score."""
