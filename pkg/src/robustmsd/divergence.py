"""Kullback-Leibler and alpha divergences: closed form, Monte Carlo and kNN."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import log_ndtr

from .errors import DataError, DuplicatePointsWarning
from .numerics import cholesky, spd_sqrt

if TYPE_CHECKING:
    from .sampling import SkewNormalParams

DISTANCE_FLOOR = 1e-12
RATIO_MEAN_TOL = 1e-10


@dataclass(frozen=True)
class KnnConfig:
    k: int = 5
    repeats: int = 1

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise DataError(f"neighbour rank must be a positive integer, got {self.k}")
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise DataError(f"repeats must be a positive integer, got {self.repeats}")


def kl_normal(mu0, sigma0, mu1, sigma1) -> float:
    """KL divergence of the Gaussian ``(mu1, sigma1)`` from the nominal ``(mu0, sigma0)``.

    This is ``E_1[log f_1 - log f_0]``: the alternative is the law being
    integrated against.
    """
    mu0 = np.asarray(mu0, dtype=float)
    mu1 = np.asarray(mu1, dtype=float)
    if mu0.shape != mu1.shape or mu0.ndim != 1:
        raise DataError("mean vectors must be 1-d and of equal length")
    c0 = cholesky(sigma0)
    c1 = cholesky(sigma1)
    if c0.dim != mu0.size or c1.dim != mu0.size:
        raise DataError("covariance dimension does not match the mean")
    diff = mu1 - mu0
    trace = float(np.trace(c0.solve(np.asarray(sigma1, dtype=float))))
    maha = float(diff @ c0.solve(diff))
    val = 0.5 * (trace + maha - mu0.size + c0.logdet() - c1.logdet())
    # rounding can leave a tiny negative when the two laws coincide
    return max(val, 0.0)


def _log_two_phi(x, var: float):
    return math.log(2.0) + log_ndtr(x / math.sqrt(var))


def kl_skew_normal(
    nominal: "SkewNormalParams",
    alt: "SkewNormalParams",
    mc_samples: int = 500_000,
    seed=None,
) -> tuple[float, float]:
    """KL divergence of a skew-normal alternative from a skew-normal nominal.

    The Gaussian part and the cross term are exact; the two ``log 2 Phi``
    expectations are one-dimensional and are estimated by Monte Carlo over
    their exact latent representation.

    Parameters
    ----------
    nominal, alt : SkewNormalParams
        Location, symmetric-root scale and skewness of each law.
    mc_samples : int
        At least 1000.
    seed
        Anything ``numpy.random.default_rng`` accepts.

    Returns
    -------
    (estimate, standard_error)
    """
    if mc_samples < 1000:
        raise DataError("kl_skew_normal needs at least 1000 Monte Carlo samples")
    mu, sigma, xi = nominal.loc, nominal.scale, nominal.skew
    mub, sigmab, xib = alt.loc, alt.scale, alt.skew
    if not (mu.size == mub.size == xi.size == xib.size):
        raise DataError("nominal and alternative dimensions differ")
    s_nom = float(xi @ xi)
    s_alt = float(xib @ xib)
    if s_nom >= 1 or s_alt >= 1:
        raise DataError("skewness vectors must have squared norm below one")

    gauss = kl_normal(mu, sigma, mub, sigmab)
    chol = cholesky(sigma)
    root_b, _ = spd_sqrt(sigmab)
    _, inv_root = spd_sqrt(sigma)
    diff = mub - mu
    cross = math.sqrt(2.0 / math.pi) * float(diff @ chol.solve(root_b @ xib))

    rng = np.random.default_rng(seed)
    z0 = np.abs(rng.standard_normal(mc_samples))
    z1 = rng.standard_normal(mc_samples)
    z2 = rng.standard_normal(mc_samples)

    # alternative's own skewing term: Xi1 = xib' Y*
    xi1 = s_alt * z0 + math.sqrt(s_alt * (1.0 - s_alt)) * z1
    own = _log_two_phi(xi1, 1.0 - s_alt) if s_alt > 0 else np.zeros(mc_samples)

    if s_nom > 0:
        # nominal skewing term evaluated under the alternative: Xi2 = xi' Sigma^{-1/2} (Y - mu)
        c = root_b @ (inv_root @ xi)
        m = float(xi @ (inv_root @ diff))
        ctx = float(c @ xib)
        resid = max(float(c @ c) - ctx * ctx, 0.0)
        xi2 = m + ctx * z0 + math.sqrt(resid) * z2
        other = _log_two_phi(xi2, 1.0 - s_nom)
    else:
        # Phi(0) = 1/2 so log 2 Phi vanishes identically
        other = np.zeros(mc_samples)

    terms = own - other
    est = gauss + cross + float(terms.mean())
    se = float(terms.std(ddof=1) / math.sqrt(mc_samples))
    return est, se


def kl_knn_estimate(nominal_sample, alt_sample, cfg: KnnConfig = KnnConfig()) -> float:
    """k-th nearest-neighbour estimate of KL(alternative || nominal).

    For each alternative point, ``rho`` is the distance to its k-th neighbour
    among the other alternative points and ``nu`` the distance to its k-th
    neighbour in the nominal sample. The estimate is
    ``mean(log(M / (K - 1))) + d * mean(log(nu / rho))``. Negative values are
    returned as is.
    """
    x = np.asarray(nominal_sample, dtype=float)
    y = np.asarray(alt_sample, dtype=float)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DataError("samples must be 2-d with the same column count")
    m, d = x.shape
    big_k = y.shape[0]
    k = cfg.k
    if big_k < k + 1:
        raise DataError(f"alternative sample needs more than k={k} points, got {big_k}")
    if m < k:
        raise DataError(f"nominal sample needs at least k={k} points, got {m}")

    # column k skips the query point itself
    rho = cKDTree(y).query(y, k=k + 1)[0][:, k]
    nu = cKDTree(x).query(y, k=k)[0]
    nu = nu[:, k - 1] if nu.ndim == 2 else nu
    if np.any(rho <= 0) or np.any(nu <= 0):
        warnings.warn(
            f"zero neighbour distances floored at {DISTANCE_FLOOR}",
            DuplicatePointsWarning,
            stacklevel=2,
        )
        rho = np.maximum(rho, DISTANCE_FLOOR)
        nu = np.maximum(nu, DISTANCE_FLOOR)
    return math.log(m / (big_k - 1)) + d * float(np.mean(np.log(nu / rho)))


def _check_ratio_weights(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0:
        raise DataError("empty weight vector")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DataError("likelihood-ratio weights must be finite and non-negative")
    if abs(w.mean() - 1.0) > RATIO_MEAN_TOL:
        raise DataError(f"likelihood-ratio weights must average to one, got {w.mean():.12g}")
    return w


def kl_of_ratio_weights(weights) -> float:
    """Sample average of ``w log w`` with ``0 log 0 = 0``."""
    w = _check_ratio_weights(weights)
    pos = w > 0
    terms = np.zeros_like(w)
    terms[pos] = w[pos] * np.log(w[pos])
    return float(terms.mean())


def alpha_divergence_of_ratio_weights(weights, alpha: float) -> float:
    """Sample average of ``(w^alpha - alpha (w - 1) - 1) / (alpha (alpha - 1))`` for ``alpha > 1``."""
    if not alpha > 1:
        raise DataError(f"alpha must exceed 1, got {alpha}")
    w = _check_ratio_weights(weights)
    terms = (w**alpha - alpha * (w - 1.0) - 1.0) / (alpha * (alpha - 1.0))
    return float(terms.mean())
