"""Model risk of trusting the nominal model: divergence estimate and loss quantile."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import NominalModel, PortfolioSpec, RiskProfile, Strategy
from .divergence import KnnConfig, kl_knn_estimate
from .errors import AllEstimatesRejected, DataError
from .experiments import fresh_seed_sequence, solver_samples
from .numerics import cholesky, empirical_quantile, sample_mean_cov
from .sampling import simulate_wealth_paths
from .solver import HorizonSolution, solve_horizon

log = logging.getLogger(__name__)

MIN_BOOT = 1000


@dataclass(frozen=True)
class ModelRiskResult:
    estimated_eta: float
    model_risk: float
    confidence: float
    diff_sample: np.ndarray = field(repr=False, compare=False)
    robust: HorizonSolution | None = field(default=None, repr=False, compare=False)
    nonrobust: HorizonSolution | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 < self.confidence < 1:
            raise DataError("confidence must lie in (0, 1)")
        if not math.isfinite(self.model_risk):
            raise DataError("model risk is not finite")
        if self.estimated_eta < 0:
            raise DataError("estimated divergence must be non-negative")


def estimate_divergence_repeated(
    dataset1_stats,
    dataset2,
    cfg: KnnConfig = KnnConfig(repeats=1000),
    seed=None,
    threads: int = 1,
    return_all: bool = False,
):
    """Average of the positive kNN divergence estimates over ``cfg.repeats`` draws.

    Each repeat draws ``K = len(dataset2)`` points from the Gaussian fitted to
    the first dataset and estimates the divergence of ``dataset2`` from them.

    Returns
    -------
    float, or ``(mean, estimates)`` when ``return_all``.
    """
    mu, sigma = dataset1_stats
    mu = np.asarray(mu, dtype=float)
    y = np.asarray(dataset2, dtype=float)
    if y.ndim != 2 or y.shape[1] != mu.size:
        raise DataError("dataset2 must be K x d with d matching the fitted mean")
    k_size = y.shape[0]
    if k_size < cfg.k + 1:
        raise DataError(f"dataset2 needs more than k={cfg.k} rows")
    lower = cholesky(sigma).lower

    def one(child):
        rng = np.random.default_rng(child)
        x = mu + rng.standard_normal((k_size, mu.size)) @ lower.T
        return kl_knn_estimate(x, y, cfg)

    children = fresh_seed_sequence(seed).spawn(cfg.repeats)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            est = np.array(list(pool.map(one, children)))
    else:
        est = np.array([one(c) for c in children])
    kept = est[est > 0]
    if kept.size == 0:
        raise AllEstimatesRejected(f"all {cfg.repeats} divergence estimates were non-positive")
    log.info("kept %d of %d divergence estimates", kept.size, est.size)
    mean = float(kept.mean())
    return (mean, est) if return_all else mean


def bootstrap_diffs(robust: Strategy, nonrobust: Strategy, dataset2, boot_count: int, seed=None, w0: float = 1.0) -> np.ndarray:
    """``W_N(nonrobust) - W_N(robust)`` on paths built from resampled rows of ``dataset2``.

    Rows are net returns; each period draws its row independently.
    """
    y = np.asarray(dataset2, dtype=float)
    if robust.weights.shape != nonrobust.weights.shape or y.ndim != 2 or y.shape[1] != robust.d:
        raise DataError("strategy and dataset2 shapes disagree")
    rng = np.random.default_rng(fresh_seed_sequence(seed))
    idx = rng.integers(0, y.shape[0], size=(robust.N, boot_count))
    blocks = [1.0 + y[idx[n]] for n in range(robust.N)]
    return simulate_wealth_paths(nonrobust, blocks, w0) - simulate_wealth_paths(robust, blocks, w0)


def model_risk_from_diffs(diffs, q: float) -> float:
    """Loss ``theta`` with ``P(diff <= -theta) = 1 - q`` on the empirical law."""
    if not 0 < q < 1:
        raise DataError(f"confidence must lie in (0, 1), got {q}")
    return -empirical_quantile(diffs, 1.0 - q)


def model_risk_quantile(
    robust: Strategy,
    nonrobust: Strategy,
    dataset2,
    boot_count: int = 20_000,
    q: float = 0.95,
    seed=None,
    w0: float = 1.0,
    estimated_eta: float = 0.0,
) -> ModelRiskResult:
    """Bootstrap the paired terminal-wealth difference and read off its loss quantile."""
    if boot_count < MIN_BOOT:
        raise DataError(f"boot_count must be at least {MIN_BOOT}")
    diffs = bootstrap_diffs(robust, nonrobust, dataset2, boot_count, seed, w0)
    return ModelRiskResult(estimated_eta, model_risk_from_diffs(diffs, q), q, diffs)


def run_model_risk(
    dataset1,
    dataset2,
    kappa: float = 3.0,
    horizon: int = 5,
    penalties=None,
    mc_samples: int = 200_000,
    cfg: KnnConfig = KnnConfig(repeats=1000),
    boot_count: int = 20_000,
    q: float = 0.95,
    seed=None,
    threads: int = 1,
    w0: float = 1.0,
) -> ModelRiskResult:
    """End to end: fit, estimate the divergence, solve both strategies, bootstrap.

    ``dataset1`` fits the Gaussian nominal model; ``dataset2`` plays the
    empirical alternative. Both hold net returns.
    """
    if boot_count < MIN_BOOT:
        raise DataError(f"boot_count must be at least {MIN_BOOT}")
    kl_seed, solve_seed, boot_seed = fresh_seed_sequence(seed).spawn(3)
    mu, sigma = sample_mean_cov(dataset1)
    eta = estimate_divergence_repeated((mu, sigma), dataset2, cfg, kl_seed, threads)
    model = NominalModel(mu, sigma)
    spec = PortfolioSpec(model.d, horizon, w0)
    samples = solver_samples(model, horizon, mc_samples, solve_seed)
    robust = solve_horizon(spec, model, RiskProfile.constant(horizon, kappa, eta, penalties), samples, "robust")
    nonrobust = solve_horizon(spec, model, RiskProfile.constant(horizon, kappa, 0.0, penalties), samples, "nonrobust")
    diffs = bootstrap_diffs(robust.strategy, nonrobust.strategy, dataset2, boot_count, boot_seed, w0)
    return ModelRiskResult(eta, model_risk_from_diffs(diffs, q), q, diffs, robust, nonrobust)
