"""Linear algebra and order-statistic kernels.

Inverse covariances are never formed explicitly: every ``Sigma^{-1} x`` goes
through the Cholesky factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DataError, DegenerateCovariance

SYMMETRY_TOL = 1e-10


def _as_square(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DataError(f"expected a square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise DataError("matrix has non-finite entries")
    return s


def _check_symmetric(s: np.ndarray) -> None:
    scale = max(1.0, float(np.max(np.abs(s))))
    if np.max(np.abs(s - s.T)) > SYMMETRY_TOL * scale:
        raise DegenerateCovariance("matrix is not symmetric")


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular ``L`` with ``Sigma = L L^T``."""

    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def solve(self, b) -> np.ndarray:
        """Return ``Sigma^{-1} b`` for a vector or a matrix of column vectors."""
        return cho_solve((self.lower, True), np.asarray(b, dtype=float))

    def whiten(self, x) -> np.ndarray:
        """Return ``L^{-1} x``."""
        return solve_triangular(self.lower, np.asarray(x, dtype=float), lower=True)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


def cholesky(sigma) -> CholeskyFactor:
    """Cholesky factor of a symmetric positive definite matrix.

    Raises
    ------
    DegenerateCovariance
        If ``sigma`` is asymmetric beyond 1e-10 or not positive definite.
    """
    s = _as_square(sigma)
    _check_symmetric(s)
    sym = 0.5 * (s + s.T)
    try:
        lower = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovariance("matrix is not positive definite") from exc
    if not np.all(np.diag(lower) > 0):
        raise DegenerateCovariance("matrix is not positive definite")
    lower.setflags(write=False)
    return CholeskyFactor(lower)


def spd_sqrt(sigma) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric square root and inverse square root of an SPD matrix.

    The skew-normal family is parametrised through the *symmetric* root, so a
    Cholesky factor cannot stand in for it here.
    """
    s = _as_square(sigma)
    _check_symmetric(s)
    vals, vecs = np.linalg.eigh(0.5 * (s + s.T))
    if vals[0] <= 0:
        raise DegenerateCovariance("matrix is not positive definite")
    root = (vecs * np.sqrt(vals)) @ vecs.T
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    return 0.5 * (root + root.T), 0.5 * (inv_root + inv_root.T)


def sample_mean_cov(data) -> tuple[np.ndarray, np.ndarray]:
    """Arithmetic mean and unbiased (divisor M-1) covariance of the rows."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise DataError(f"expected an M x d matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise DataError("need at least two rows to estimate a covariance")
    mean = x.mean(axis=0)
    dev = x - mean
    cov = dev.T @ dev / (x.shape[0] - 1)
    return mean, 0.5 * (cov + cov.T)


def empirical_quantile(xs, p: float) -> float:
    """Lower order-statistic quantile: the ``ceil(p*M)``-th smallest element.

    No interpolation, so the result is always an element of ``xs``.
    """
    arr = np.asarray(xs, dtype=float).ravel()
    if arr.size == 0:
        raise DataError("empirical_quantile of an empty sample")
    if not 0.0 <= p <= 1.0:
        raise DataError(f"probability must lie in [0, 1], got {p}")
    m = arr.size
    # guard against p*m landing a hair above an integer through rounding
    idx = math.ceil(p * m - 1e-9) - 1
    idx = min(max(idx, 0), m - 1)
    return float(np.partition(arr, idx)[idx])
