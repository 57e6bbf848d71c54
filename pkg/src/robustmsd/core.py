"""Domain types and the sample-average objective evaluator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .numerics import cholesky

ROW_SUM_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def _finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} has non-finite entries")


@dataclass(frozen=True)
class PortfolioSpec:
    d: int
    N: int
    W0: float = 1.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise DataError(f"need at least two assets, got d={self.d}")
        if int(self.N) != self.N or self.N < 1:
            raise DataError(f"horizon must be >= 1, got N={self.N}")
        if not (np.isfinite(self.W0) and self.W0 > 0):
            raise DataError(f"initial wealth must be positive, got {self.W0}")


@dataclass(frozen=True)
class NominalModel:
    """Mean of one-period *net* returns and their covariance.

    The model is time-homogeneous; ``gross_mean`` is what the solver uses.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = _frozen(self.mu)
        sigma = _frozen(self.sigma)
        if mu.ndim != 1:
            raise DataError("mu must be a vector")
        if sigma.shape != (mu.size, mu.size):
            raise DataError(f"sigma shape {sigma.shape} does not match mu length {mu.size}")
        _finite("mu", mu)
        _finite("sigma", sigma)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        # validates SPD up front so every consumer can assume it
        object.__setattr__(self, "_chol", cholesky(sigma))

    @property
    def d(self) -> int:
        return self.mu.size

    @property
    def chol(self):
        return self._chol

    @property
    def gross_mean(self) -> np.ndarray:
        return 1.0 + self.mu


@dataclass(frozen=True)
class RiskProfile:
    """Per-period risk aversion, KL radius and discount penalty.

    ``penalty[n]`` is the product ``c * eta * kappa`` of period ``n + 1``; it
    discounts the continuation value by ``exp(-penalty[n])``.
    """

    kappa: np.ndarray
    eta: np.ndarray
    penalty: np.ndarray = field(default=None)

    def __post_init__(self):
        kappa = _frozen(np.atleast_1d(self.kappa))
        eta = _frozen(np.atleast_1d(self.eta))
        if kappa.ndim != 1 or kappa.shape != eta.shape:
            raise DataError("kappa and eta must be vectors of equal length")
        n = kappa.size
        pen = np.zeros(n - 1) if self.penalty is None else np.atleast_1d(self.penalty)
        pen = _frozen(pen)
        if pen.shape != (n - 1,):
            raise DataError(f"penalty must have length N-1={n - 1}, got {pen.size}")
        for name, arr in (("kappa", kappa), ("eta", eta), ("penalty", pen)):
            _finite(name, arr)
        # zero is allowed so the evaluator can price pure expectations; the
        # solver rejects it through the feasibility check
        if np.any(kappa < 0):
            raise DataError("risk aversions must be non-negative")
        if np.any(eta < 0):
            raise DataError("KL radii must be non-negative")
        if np.any(pen < 0):
            raise DataError("penalties must be non-negative")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "penalty", pen)

    @property
    def N(self) -> int:
        return self.kappa.size

    @classmethod
    def constant(cls, N: int, kappa: float, eta: float, penalty=None) -> "RiskProfile":
        return cls(np.full(N, float(kappa)), np.full(N, float(eta)), penalty)

    @classmethod
    def from_scaling(cls, kappa, eta, c) -> "RiskProfile":
        """Build penalties from scaling constants: ``penalty[n] = c[n+1]*eta[n+1]*kappa[n+1]``."""
        kappa = np.atleast_1d(np.asarray(kappa, dtype=float))
        eta = np.atleast_1d(np.asarray(eta, dtype=float))
        c = np.broadcast_to(np.asarray(c, dtype=float), kappa.shape)
        return cls(kappa, eta, (c * eta * kappa)[1:])


def enforce_row_sums(weights: np.ndarray) -> np.ndarray:
    """Push each row's budget residual onto its largest-magnitude weight."""
    w = np.array(weights, dtype=float, ndmin=2)
    for row in w:
        resid = row.sum() - 1.0
        if resid != 0.0:
            row[int(np.argmax(np.abs(row)))] -= resid
    return w


@dataclass(frozen=True)
class Strategy:
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float, ndmin=2)
        if w.ndim != 2:
            raise DataError("strategy weights must be an N x d matrix")
        _finite("strategy", w)
        if np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
            raise DataError("each strategy row must sum to one")
        w = enforce_row_sums(w)
        if np.any(np.abs(w.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise DataError("row sums could not be normalised to 1e-12")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def N(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class ReturnSample:
    """Monte Carlo draws of *gross* returns, one row per scenario."""

    draws: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        x = _frozen(self.draws)
        if x.ndim != 2 or x.shape[0] < 2:
            raise DataError(f"need an M x d matrix with M >= 2, got shape {x.shape}")
        _finite("return sample", x)
        object.__setattr__(self, "draws", x)

    @property
    def M(self) -> int:
        return self.draws.shape[0]

    @property
    def d(self) -> int:
        return self.draws.shape[1]

    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)


@dataclass(frozen=True)
class WealthPath:
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 1 or v.size < 2:
            raise DataError("wealth path needs W_0 and at least one more value")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_returns(cls, W0: float, returns, strategy: Strategy) -> "WealthPath":
        """Roll wealth forward: ``W[n+1] = W[n] * R[n] @ u[n]`` with gross ``returns`` (N x d)."""
        r = np.asarray(returns, dtype=float)
        if r.shape != strategy.weights.shape:
            raise DataError("returns and strategy shapes differ")
        vals = [float(W0)]
        for n in range(strategy.N):
            vals.append(vals[-1] * float(r[n] @ strategy.weights[n]))
        return cls(np.array(vals))

    @property
    def terminal(self) -> float:
        return float(self.values[-1])


def evaluate_objective(
    spec: PortfolioSpec,
    model: NominalModel,
    profile: RiskProfile,
    strategy: Strategy,
    sample: ReturnSample,
) -> float:
    """Sample-average mean-standard-deviation objective of a strategy.

    Sums ``E[W_{n+1}] - kappa_n E[W_n] sqrt(u_n' Sigma u_n)`` over periods,
    with expected wealth carried forward through the sample-mean gross return.

    Parameters
    ----------
    spec, model, profile, strategy, sample
        Must agree on ``d`` and ``N``.

    Returns
    -------
    float
    """
    if not (model.d == spec.d == strategy.d == sample.d):
        raise DataError("asset count differs between inputs")
    if not (profile.N == spec.N == strategy.N):
        raise DataError("horizon differs between inputs")
    mean_r = sample.mean()
    w = float(spec.W0)
    total = 0.0
    for n in range(spec.N):
        u = strategy.weights[n]
        w_next = w * float(mean_r @ u)
        sd = float(np.sqrt(u @ model.sigma @ u))
        total += w_next - profile.kappa[n] * w * sd
        w = w_next
    if not np.isfinite(total):
        raise DataError("objective evaluated to a non-finite value")
    return total
