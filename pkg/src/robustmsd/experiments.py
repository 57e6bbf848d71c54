"""Worst-case scenario construction and paired robust/non-robust comparisons."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import NominalModel, PortfolioSpec, RiskProfile, Strategy
from .divergence import kl_skew_normal
from .errors import BetaOutOfRange, DataError, UnreachableRadius
from .numerics import cholesky, spd_sqrt
from .sampling import SkewNormalParams, sample_mvn, sample_skew_normal, simulate_wealth_paths
from .solver import HorizonSolution, solve_horizon

# Daily-return market used by the simulation studies.
REFERENCE_MU = np.array([0.0007, 0.0022, 0.0016])
REFERENCE_SIGMA = 1e-4 * np.array([[3.0, 1.0, 1.0], [1.0, 4.0, 1.0], [1.0, 1.0, 3.0]])
REFERENCE_KAPPA = 3.0
REFERENCE_HORIZON = 5
REFERENCE_PENALTIES = (7.5, 8.0, 8.5, 9.0)
STUDY_ETAS = (0.005, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5)
# mean shifts (percent of mu) whose skew-normal worst cases sit near STUDY_ETAS
STUDY_BETAS = (-78.30, -242.54, -334.61, -449.99, -523.30, -572.42, -604.20)

PATH_BATCH = 25_000
KL_MC_SAMPLES = 500_000


def fresh_seed_sequence(seed) -> np.random.SeedSequence:
    """Seed sequence for ``seed``; copies a passed-in sequence since spawning mutates it."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)


def reference_model() -> NominalModel:
    return NominalModel(REFERENCE_MU, REFERENCE_SIGMA)


@dataclass(frozen=True)
class ScenarioSpec:
    """Worst-case law used to simulate comparison paths.

    ``gaussian`` scales the nominal mean by ``gamma``; ``skew`` keeps
    location and scale and adds skewness ``xi_bar``.
    """

    kind: str
    eta: float
    model: NominalModel
    gamma: float | None = None
    beta: float | None = None
    xi_bar: np.ndarray | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise DataError("scenario eta must be non-negative")
        if self.kind == "gaussian":
            if self.gamma is None or self.beta is not None or self.xi_bar is not None:
                raise DataError("gaussian scenario takes gamma only")
        elif self.kind == "skew":
            if self.xi_bar is None or self.gamma is not None:
                raise DataError("skew scenario takes beta and xi_bar")
            xi = np.array(self.xi_bar, dtype=float)
            xi.setflags(write=False)
            object.__setattr__(self, "xi_bar", xi)
        else:
            raise DataError(f"unknown scenario kind {self.kind!r}")

    @classmethod
    def gaussian(cls, model: NominalModel, eta: float) -> "ScenarioSpec":
        return cls("gaussian", eta, model, gamma=gamma_for_eta(model.mu, model.sigma, eta))

    @classmethod
    def skew(cls, model: NominalModel, beta: float, eta: float | None = None, seed=0) -> "ScenarioSpec":
        params = xi_for_beta(model.mu, model.sigma, beta)
        if eta is None:
            eta = kl_skew_normal(SkewNormalParams.gaussian(model.mu, model.sigma), params, KL_MC_SAMPLES, seed)[0]
        return cls("skew", float(eta), model, beta=float(beta), xi_bar=params.skew)

    def sample(self, count: int, seed=None):
        if self.kind == "gaussian":
            return sample_mvn(self.gamma * self.model.mu, self.model.sigma, count, seed)
        params = SkewNormalParams(self.model.mu, self.model.sigma, self.xi_bar)
        return sample_skew_normal(params, count, seed)


@dataclass(frozen=True)
class ComparisonReport:
    outperform_count: int
    path_count: int
    mean_wealth_robust: float
    mean_wealth_nonrobust: float
    ratio_robust: float
    ratio_nonrobust: float
    seed: int | None = None
    diffs: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= self.outperform_count <= self.path_count:
            raise DataError("outperform count outside [0, path_count]")

    @property
    def outperform_pct(self) -> float:
        return 100.0 * self.outperform_count / self.path_count

    @property
    def mean_difference(self) -> float:
        return self.mean_wealth_robust - self.mean_wealth_nonrobust

    @property
    def ratio_difference(self) -> float:
        return self.ratio_robust - self.ratio_nonrobust


def gamma_for_eta(mu, sigma, eta: float) -> float:
    """Mean scale ``gamma <= 1`` putting ``N(gamma mu, sigma)`` at divergence ``eta``.

    Solves ``eta = (1 - gamma)^2 q / 2`` with ``q = mu' sigma^{-1} mu`` on the
    pessimistic branch.
    """
    if eta < 0:
        raise DataError("eta must be non-negative")
    mu = np.asarray(mu, dtype=float)
    q = float(mu @ cholesky(sigma).solve(mu))
    if eta == 0:
        return 1.0
    if q <= 0:
        raise UnreachableRadius("a zero mean cannot be scaled to a positive divergence")
    return 1.0 - math.sqrt(2.0 * eta / q)


def eta_for_gamma(mu, sigma, gamma: float) -> float:
    mu = np.asarray(mu, dtype=float)
    q = float(mu @ cholesky(sigma).solve(mu))
    return 0.5 * (1.0 - gamma) ** 2 * q


def xi_for_beta(mu, sigma, beta_pct: float) -> SkewNormalParams:
    """Skew-normal alternative whose mean is ``mu`` shifted by ``beta_pct`` percent of ``mu``.

    Location and scale stay at ``mu`` and ``sigma``; the skewness is
    ``sqrt(pi/2) sigma^{-1/2} mu beta/100``, so ``beta = 0`` is the nominal law.
    """
    mu = np.asarray(mu, dtype=float)
    _, inv_root = spd_sqrt(sigma)
    xi = math.sqrt(math.pi / 2.0) * (beta_pct / 100.0) * (inv_root @ mu)
    s = float(xi @ xi)
    if s >= 1.0:
        raise BetaOutOfRange(f"beta={beta_pct}% needs |xi|^2={s:.4f} >= 1")
    return SkewNormalParams(mu, sigma, xi)


def beta_for_eta(mu, sigma, eta: float, mc_samples: int = KL_MC_SAMPLES, seed=0) -> float:
    """Negative mean shift (percent) whose skew-normal alternative has divergence ``eta``.

    A fixed seed keeps the Monte Carlo divergence smooth in ``beta``.
    """
    if eta <= 0:
        return 0.0
    mu = np.asarray(mu, dtype=float)
    _, inv_root = spd_sqrt(sigma)
    v = math.sqrt(math.pi / 2.0) * (inv_root @ mu)
    # |xi| < 1 bounds the reachable shift
    beta_min = -100.0 / math.sqrt(float(v @ v)) * (1.0 - 1e-9)
    nominal = SkewNormalParams.gaussian(mu, sigma)

    def f(beta):
        return kl_skew_normal(nominal, xi_for_beta(mu, sigma, beta), mc_samples, seed)[0] - eta

    if f(beta_min) < 0:
        raise UnreachableRadius(f"skew-normal mean shifts cannot reach eta={eta}")
    return brentq(f, beta_min, 0.0, xtol=1e-6)


def _path_batches(path_count: int, seed):
    ss = fresh_seed_sequence(seed)
    n_batches = max(1, math.ceil(path_count / PATH_BATCH))
    sizes = [PATH_BATCH] * (n_batches - 1) + [path_count - PATH_BATCH * (n_batches - 1)]
    return list(zip(sizes, ss.spawn(n_batches)))


def compare_strategies(
    robust: Strategy,
    nonrobust: Strategy,
    worst_case: ScenarioSpec,
    path_count: int,
    seed=None,
    w0: float = 1.0,
    threads: int = 1,
    keep_diffs: bool = False,
) -> ComparisonReport:
    """Paired terminal-wealth comparison on paths drawn from ``worst_case``.

    Both strategies see the same paths. Paths come in fixed-size batches with
    their own spawned seeds, so the result does not depend on ``threads``.
    """
    if robust.weights.shape != nonrobust.weights.shape:
        raise DataError("strategies differ in shape")
    if path_count < 2:
        raise DataError("need at least two paths")
    n_periods = robust.N

    def run(batch):
        size, child = batch
        streams = child.spawn(n_periods)
        blocks = [worst_case.sample(size, np.random.default_rng(s)).draws for s in streams]
        return simulate_wealth_paths(robust, blocks, w0), simulate_wealth_paths(nonrobust, blocks, w0)

    batches = _path_batches(path_count, seed)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, batches))
    else:
        parts = [run(b) for b in batches]
    wr = np.concatenate([p[0] for p in parts])
    wn = np.concatenate([p[1] for p in parts])
    return ComparisonReport(
        outperform_count=int(np.count_nonzero(wr > wn)),
        path_count=path_count,
        mean_wealth_robust=float(wr.mean()),
        mean_wealth_nonrobust=float(wn.mean()),
        ratio_robust=float((wr.mean() - w0) / wr.std(ddof=1)),
        ratio_nonrobust=float((wn.mean() - w0) / wn.std(ddof=1)),
        seed=seed if isinstance(seed, (int, np.integer)) else None,
        diffs=(wn - wr) if keep_diffs else None,
    )


@dataclass(frozen=True)
class StudyRow:
    scenario: ScenarioSpec
    report: ComparisonReport
    robust: HorizonSolution
    nonrobust: HorizonSolution


def solver_samples(model: NominalModel, horizon: int, mc_samples: int, seed):
    """One nominal Monte Carlo sample per period."""
    ss = fresh_seed_sequence(seed)
    return [sample_mvn(model.mu, model.sigma, mc_samples, np.random.default_rng(s)) for s in ss.spawn(horizon)]


def run_study(
    scenarios,
    model: NominalModel,
    kappa: float = REFERENCE_KAPPA,
    horizon: int = REFERENCE_HORIZON,
    penalties=REFERENCE_PENALTIES,
    mc_samples: int = 200_000,
    path_count: int = 100_000,
    seed: int = 0,
    threads: int = 1,
    w0: float = 1.0,
) -> list[StudyRow]:
    """Solve robust and non-robust strategies and compare them per scenario.

    The solver samples are shared by every row, so the non-robust strategy
    is the same throughout. Each scenario's robust strategy uses that
    scenario's ``eta``.
    """
    solver_seed, *path_seeds = fresh_seed_sequence(seed).spawn(1 + len(scenarios))
    samples = solver_samples(model, horizon, mc_samples, solver_seed)
    spec = PortfolioSpec(model.d, horizon, w0)
    nonrobust = solve_horizon(spec, model, RiskProfile.constant(horizon, kappa, 0.0, penalties), samples, mode="nonrobust")
    rows = []
    for sc, ps in zip(scenarios, path_seeds):
        prof = RiskProfile.constant(horizon, kappa, sc.eta, penalties)
        robust = solve_horizon(spec, model, prof, samples, mode="robust")
        report = compare_strategies(robust.strategy, nonrobust.strategy, sc, path_count, ps, w0, threads)
        rows.append(StudyRow(sc, report, robust, nonrobust))
    return rows


def gaussian_study(etas=STUDY_ETAS, model: NominalModel | None = None, **kw) -> list[StudyRow]:
    model = model or reference_model()
    return run_study([ScenarioSpec.gaussian(model, e) for e in etas], model, **kw)


def skew_study(betas=STUDY_BETAS, model: NominalModel | None = None, kl_seed: int = 0, **kw) -> list[StudyRow]:
    model = model or reference_model()
    return run_study([ScenarioSpec.skew(model, b, seed=kl_seed) for b in betas], model, **kw)
