"""Nominal, skew-normal and exponentially tilted return samples; wealth paths."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ReturnSample, Strategy
from .divergence import kl_of_ratio_weights
from .errors import DataError, RobustMSDError
from .numerics import cholesky, spd_sqrt

TILT_MEAN_TOL = 1e-10
TILT_KL_SLACK = 1e-6


def _seed_of(seed):
    return seed if isinstance(seed, (int, np.integer)) or seed is None else None


@dataclass(frozen=True)
class SkewNormalParams:
    """``Y = loc + scale^{1/2} (skew |Z0| + (I - skew skew')^{1/2} Z)``.

    ``scale^{1/2}`` is the symmetric root. ``loc`` is in net-return units.
    """

    loc: np.ndarray
    scale: np.ndarray
    skew: np.ndarray

    def __post_init__(self):
        loc = np.array(self.loc, dtype=float)
        scale = np.array(self.scale, dtype=float)
        skew = np.array(self.skew, dtype=float)
        d = loc.size
        if loc.ndim != 1 or skew.shape != (d,) or scale.shape != (d, d):
            raise DataError("skew-normal parameters have inconsistent shapes")
        cholesky(scale)
        if float(skew @ skew) >= 1.0:
            raise DataError(f"skewness must satisfy |xi|^2 < 1, got {float(skew @ skew):.6g}")
        for arr in (loc, scale, skew):
            arr.setflags(write=False)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "skew", skew)

    @classmethod
    def gaussian(cls, mu, sigma) -> "SkewNormalParams":
        return cls(mu, sigma, np.zeros(len(mu)))

    def mean(self) -> np.ndarray:
        root, _ = spd_sqrt(self.scale)
        return self.loc + math.sqrt(2.0 / math.pi) * root @ self.skew

    def cov(self) -> np.ndarray:
        root, _ = spd_sqrt(self.scale)
        v = root @ self.skew
        return self.scale - (2.0 / math.pi) * np.outer(v, v)


@dataclass(frozen=True)
class TiltedMeasure:
    """Likelihood ratio of the worst-case law at each nominal draw.

    When ``eta`` is given the weights must respect the ball, up to 1e-6.
    """

    weights: np.ndarray
    theta: float
    eta: float | None = None

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 1 or np.any(w < 0):
            raise DataError("tilt weights must be a non-negative vector")
        if abs(w.mean() - 1.0) > TILT_MEAN_TOL:
            raise DataError("tilt weights must average to one")
        if not self.theta > 0:
            raise DataError("theta must be positive")
        if self.eta is not None and kl_of_ratio_weights(w) > self.eta + TILT_KL_SLACK:
            raise DataError("tilt leaves the divergence ball")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def kl(self) -> float:
        return kl_of_ratio_weights(self.weights)

    def expect(self, values) -> np.ndarray:
        """Tilted expectation of per-draw values (rows)."""
        v = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, v, axes=(0, 0)) / self.weights.size


def sample_mvn(mu, sigma, count: int, seed=None) -> ReturnSample:
    """Gaussian gross returns ``1 + mu + L z``.

    ``mu`` is the mean *net* return; the draws come back gross.
    """
    mu = np.asarray(mu, dtype=float)
    chol = cholesky(sigma)
    if chol.dim != mu.size:
        raise DataError("sigma dimension does not match mu")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((int(count), mu.size))
    return ReturnSample(1.0 + mu + z @ chol.lower.T, seed=_seed_of(seed))


def rank_one_root(xi) -> np.ndarray:
    """``(I - xi xi')^{1/2}`` from its rank-one structure."""
    xi = np.asarray(xi, dtype=float)
    s = float(xi @ xi)
    eye = np.eye(xi.size)
    if s == 0.0:
        return eye
    if s >= 1.0:
        raise DataError("rank-one root needs |xi|^2 < 1")
    return eye - np.outer(xi, xi) * (1.0 - math.sqrt(1.0 - s)) / s


def sample_skew_normal(params: SkewNormalParams, count: int, seed=None) -> ReturnSample:
    """Exact skew-normal draws, returned as gross returns ``1 + Y``."""
    root, _ = spd_sqrt(params.scale)
    p = rank_one_root(params.skew)
    rng = np.random.default_rng(seed)
    count = int(count)
    z0 = np.abs(rng.standard_normal((count, 1)))
    z = rng.standard_normal((count, params.loc.size))
    ystar = z0 * params.skew + z @ p.T
    return ReturnSample(1.0 + params.loc + ystar @ root.T, seed=_seed_of(seed))


def simulate_wealth_paths(strategy: Strategy, path_draws, w0: float = 1.0, full: bool = False) -> np.ndarray:
    """Roll wealth forward along paired paths.

    Row ``i`` of every period block belongs to path ``i``. Returns the
    terminal wealths, or the ``M x (N+1)`` wealth matrix when ``full``.
    """
    blocks = [b.draws if isinstance(b, ReturnSample) else np.asarray(b, dtype=float) for b in path_draws]
    if len(blocks) != strategy.N:
        raise DataError(f"need {strategy.N} period blocks, got {len(blocks)}")
    m = blocks[0].shape[0]
    for b in blocks:
        if b.ndim != 2 or b.shape != (m, strategy.d):
            raise DataError("period blocks must all be M x d")
    wealth = np.empty((m, strategy.N + 1))
    wealth[:, 0] = w0
    for n, block in enumerate(blocks):
        wealth[:, n + 1] = wealth[:, n] * (block @ strategy.weights[n])
    return wealth if full else wealth[:, -1].copy()


def tilt_weights(sample: ReturnSample | np.ndarray, u, theta: float, eta: float | None = None) -> TiltedMeasure:
    """Weights proportional to ``exp(-R'u / theta)``, normalised to mean one."""
    draws = sample.draws if isinstance(sample, ReturnSample) else np.asarray(sample, dtype=float)
    return tilt_from_payoff(draws @ np.asarray(u, dtype=float), theta, eta)


def tilt_from_payoff(z, theta: float, eta: float | None = None) -> TiltedMeasure:
    if not theta > 0:
        raise DataError(f"theta must be positive, got {theta}")
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        expo = -np.asarray(z, dtype=float) / theta
    if not np.all(np.isfinite(expo)):
        raise RobustMSDError(f"tilt exponent overflowed at theta={theta:.3e}")
    expo -= expo.max()
    w = np.exp(expo)
    w /= w.mean()
    return TiltedMeasure(w, float(theta), eta)
