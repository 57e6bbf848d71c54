"""Exception and warning types raised across the package."""

from __future__ import annotations


class RobustMSDError(Exception):
    """Base class for every error raised by robustmsd.

    ``period`` is filled in by the backward induction when a single-period
    solve fails, so callers can tell which step of the horizon broke.
    """

    def __init__(self, message: str, *, period: int | None = None):
        super().__init__(message)
        self.message = message
        self.period = period

    def __str__(self) -> str:
        if self.period is None:
            return self.message
        return f"period {self.period}: {self.message}"

    def to_record(self) -> dict:
        return {"error": type(self).__name__, "message": self.message, "period": self.period}


class DataError(RobustMSDError, ValueError):
    """Malformed input: wrong shapes, non-finite values, bad CSV rows."""


class DegenerateCovariance(RobustMSDError, ValueError):
    """Covariance matrix is not symmetric positive definite."""


class EtaTooLargeForSample(RobustMSDError):
    """Requested KL radius exceeds what the finite sample can express."""


class KappaTooSmall(RobustMSDError):
    """Risk aversion violates the feasibility condition 1 - g/kappa^2 > 0."""


class NoConvergence(RobustMSDError):
    """Fixed-point iteration hit its iteration cap."""

    def __init__(self, message: str, *, residual: float, period: int | None = None):
        super().__init__(message, period=period)
        self.residual = residual

    def to_record(self) -> dict:
        rec = super().to_record()
        rec["residual"] = self.residual
        return rec


class UnreachableRadius(RobustMSDError, ValueError):
    """A scaled-mean scenario cannot reach the requested divergence."""


class BetaOutOfRange(RobustMSDError, ValueError):
    """Mean shift requires a skewness vector with norm >= 1."""


class AllEstimatesRejected(RobustMSDError):
    """Every repeated kNN divergence estimate was non-positive."""


class MultipleSolutionsWarning(RuntimeWarning):
    """Different warm starts of the period solver reached different fixed points."""


class DuplicatePointsWarning(RuntimeWarning):
    """Zero nearest-neighbour distances were floored in the kNN estimator."""
