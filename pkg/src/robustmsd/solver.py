"""Robust and non-robust mean-standard-deviation portfolio solvers.

Each period maximises ``E_worst[R'u] + d*G_next*E[R'u] - kappa*sd(u)``
where the worst case ranges over a KL ball of radius ``eta`` around the
sampled nominal law. The inner minimisation is solved through its one
dimensional dual in ``theta``; the outer problem is a fixed point between
the tilted mean and the closed-form mean-standard-deviation weights.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from .core import NominalModel, PortfolioSpec, ReturnSample, RiskProfile, Strategy, enforce_row_sums
from .errors import (
    DataError,
    EtaTooLargeForSample,
    KappaTooSmall,
    MultipleSolutionsWarning,
    NoConvergence,
    RobustMSDError,
)
from .numerics import CholeskyFactor, cholesky
from .sampling import TiltedMeasure, tilt_from_payoff

log = logging.getLogger(__name__)

KL_TOL = 1e-8
WEIGHT_TOL = 1e-9
MAX_ITER = 500
DAMPING = 0.5
BUDGET_TOL = 1e-10
UNIQUENESS_TOL = 1e-6


@dataclass(frozen=True)
class PeriodSolution:
    u: np.ndarray
    theta: float
    X: np.ndarray
    a: float
    b: float
    h: float
    g: float
    S: float
    G: float
    kl_achieved: float
    iterations: int = 0

    @property
    def robust(self) -> bool:
        return self.theta > 0


@dataclass(frozen=True)
class HorizonSolution:
    periods: tuple
    value_at_w0: float
    accepted: bool
    positivity_probs: np.ndarray
    W0: float = 1.0

    @property
    def strategy(self) -> Strategy:
        return Strategy(np.vstack([p.u for p in self.periods]))

    @property
    def G(self) -> np.ndarray:
        return np.array([p.G for p in self.periods])


# -- closed-form weights -----------------------------------------------------


def msd_weights(chol: CholeskyFactor, X, kappa: float):
    """Mean-standard-deviation optimum for mean vector ``X`` on the budget set.

    Returns ``(u, a, b, h, g, S)``; raises KappaTooSmall when
    ``1 - g / kappa^2 <= 0``.
    """
    X = np.asarray(X, dtype=float)
    ones = np.ones(X.size)
    si1 = chol.solve(ones)
    six = chol.solve(X)
    a = float(ones @ si1)
    b = float(ones @ six)
    h = float(X @ six)
    g = h - b * b / a
    slack = 1.0 - g / kappa**2
    if not slack > 0:
        raise KappaTooSmall(f"1 - g/kappa^2 = {slack:.6g} with kappa={kappa:.6g}, g={g:.6g}")
    S = math.sqrt((1.0 / a) / slack)
    u = (S / kappa) * (six - (b / a) * si1) + si1 / a
    if abs(u.sum() - 1.0) > BUDGET_TOL:
        # the formula is budget-exact; drift this large means a bad solve
        raise RobustMSDError(f"weights sum to {u.sum():.15g}")
    u = enforce_row_sums(u)[0]
    return u, a, b, h, g, S


def minimum_variance(sigma) -> np.ndarray:
    chol = cholesky(sigma)
    si1 = chol.solve(np.ones(chol.dim))
    return si1 / si1.sum()


# -- inner problem -----------------------------------------------------------


def _kl_at(z: np.ndarray, theta: float) -> float:
    expo = -z / theta
    expo = expo - expo.max()
    w = np.exp(expo)
    mean_w = w.mean()
    # E[w log w] for w normalised to mean one
    return float(np.mean(w * expo) / mean_w - math.log(mean_w))


def max_sample_kl(z) -> float:
    """Divergence of the tilt that sits entirely on the worst payoffs."""
    z = np.asarray(z, dtype=float)
    ties = int(np.count_nonzero(z == z.min()))
    return math.log(z.size / ties)


def _log_mean_exp(z: np.ndarray, theta: float) -> float:
    return float(logsumexp(-z / theta) - math.log(z.size))


def dual_value(z, theta: float, eta: float) -> float:
    """``-theta log E exp(-z/theta) - eta theta``."""
    z = np.asarray(z, dtype=float)
    return -theta * _log_mean_exp(z, theta) - eta * theta


def find_theta(z, eta: float, theta0: float | None = None) -> float:
    """Temperature at which the tilt of payoffs ``z`` has divergence ``eta``."""
    z = np.asarray(z, dtype=float)
    kl_max = max_sample_kl(z)
    if eta >= kl_max:
        raise EtaTooLargeForSample(
            f"eta={eta:.6g} is not below the sample's maximum divergence {kl_max:.6g}; "
            "use more Monte Carlo draws"
        )
    spread = float(z.std())
    if theta0 is None or not theta0 > 0:
        theta0 = spread if spread > 0 else 1.0

    def f(t):
        return _kl_at(z, math.exp(t)) - eta

    lo = hi = math.log(theta0)
    step = math.log(10.0)
    f_lo = f_hi = f(lo)
    # KL falls as theta grows: need f(lo) > 0 > f(hi)
    for _ in range(200):
        if f_lo > 0:
            break
        lo -= step
        f_lo = f(lo)
    else:
        raise EtaTooLargeForSample(f"could not bracket theta for eta={eta:.6g}")
    for _ in range(200):
        if f_hi < 0:
            break
        hi += step
        f_hi = f(hi)
    else:
        raise RobustMSDError(f"could not bracket theta from above for eta={eta:.6g}")
    t = brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return math.exp(t)


def solve_inner(sample, u, eta: float, theta0: float | None = None) -> tuple[TiltedMeasure, float]:
    """Worst-case tilt of the payoff ``R'u`` inside the KL ball of radius ``eta``.

    Returns the tilted measure and ``-theta log E exp(-R'u/theta) - eta theta``.
    """
    if not eta > 0:
        raise DataError(f"solve_inner needs eta > 0, got {eta}")
    draws = sample.draws if isinstance(sample, ReturnSample) else np.asarray(sample, dtype=float)
    z = draws @ np.asarray(u, dtype=float)
    theta = find_theta(z, eta, theta0)
    measure = tilt_from_payoff(z, theta)
    return measure, dual_value(z, theta, eta)


def worst_case_value(sample, u, sigma, kappa: float, eta: float, discount_g_next: float = 0.0, mean_r=None) -> float:
    """One-period objective of ``u`` under its own worst case."""
    draws = sample.draws if isinstance(sample, ReturnSample) else np.asarray(sample, dtype=float)
    u = np.asarray(u, dtype=float)
    mean_r = draws.mean(axis=0) if mean_r is None else np.asarray(mean_r, dtype=float)
    sd = math.sqrt(float(u @ np.asarray(sigma) @ u))
    if eta > 0:
        _, inner = solve_inner(draws, u, eta)
    else:
        inner = float(np.mean(draws @ u))
    return inner + discount_g_next * float(mean_r @ u) - kappa * sd


def period_objective(sample, u, theta: float, sigma, kappa: float, eta: float, discount_g_next: float = 0.0, mean_r=None) -> float:
    """Dual objective at a fixed ``theta``; concave in ``u``."""
    draws = sample.draws if isinstance(sample, ReturnSample) else np.asarray(sample, dtype=float)
    u = np.asarray(u, dtype=float)
    mean_r = draws.mean(axis=0) if mean_r is None else np.asarray(mean_r, dtype=float)
    sd = math.sqrt(float(u @ np.asarray(sigma) @ u))
    return dual_value(draws @ u, theta, eta) + discount_g_next * float(mean_r @ u) - kappa * sd


# -- one period --------------------------------------------------------------


def solve_period_nonrobust(sigma, kappa: float, X, chol: CholeskyFactor | None = None) -> PeriodSolution:
    """Closed-form period solution for a fixed mean vector ``X``.

    ``X`` already carries the continuation factor, e.g. ``(1 + G_next) E[R]``,
    so ``G = X'u - kappa S``. ``theta`` and ``kl_achieved`` are zero.
    """
    chol = chol or cholesky(sigma)
    X = np.asarray(X, dtype=float)
    u, a, b, h, g, S = msd_weights(chol, X, kappa)
    return PeriodSolution(u=u, theta=0.0, X=X, a=a, b=b, h=h, g=g, S=S,
                          G=float(X @ u) - kappa * S, kl_achieved=0.0)


def _fixed_point(draws, chol, kappa, eta, dg, mean_r, u, damping, tol, max_iter):
    theta = None
    resid = math.inf
    for it in range(1, max_iter + 1):
        z = draws @ u
        theta = find_theta(z, eta, theta)
        w = tilt_from_payoff(z, theta).weights
        X = (w @ draws) / draws.shape[0] + dg * mean_r
        u_new = msd_weights(chol, X, kappa)[0]
        resid = float(np.max(np.abs(u_new - u)))
        if resid < tol:
            return u_new, theta, it
        u = enforce_row_sums(u + damping * (u_new - u))[0]
    raise NoConvergence(f"no fixed point after {max_iter} iterations", residual=resid)


def solve_period(
    sample,
    sigma,
    kappa: float,
    eta: float,
    discount_g_next: float = 0.0,
    mean_r=None,
    *,
    damping: float = DAMPING,
    tol: float = WEIGHT_TOL,
    max_iter: int = MAX_ITER,
    check_uniqueness: bool = False,
    chol: CholeskyFactor | None = None,
) -> PeriodSolution:
    """Robust period solution by damped fixed-point iteration.

    Parameters
    ----------
    sample : ReturnSample or array
        Gross-return draws, reused for every iteration.
    sigma : array
        Covariance entering the standard-deviation penalty.
    kappa, eta : float
        Risk aversion and KL radius. ``eta == 0`` takes the closed form.
    discount_g_next : float
        ``exp(-penalty_{n+1}) * G_{n+1}``; zero in the last period.
    mean_r : array, optional
        Nominal gross mean carrying the continuation value; defaults to the
        sample mean.
    check_uniqueness : bool
        Also iterate from equal weights and warn if the fixed points differ.

    Returns
    -------
    PeriodSolution
    """
    draws = sample.draws if isinstance(sample, ReturnSample) else np.asarray(sample, dtype=float)
    if draws.ndim != 2 or draws.shape[0] < draws.shape[1] + 1:
        raise DataError("sample needs at least d + 1 draws")
    if not kappa > 0:
        raise KappaTooSmall(f"kappa must be positive, got {kappa}")
    if not 0 < damping <= 1:
        raise DataError(f"damping must lie in (0, 1], got {damping}")
    chol = chol or cholesky(sigma)
    mean_r = draws.mean(axis=0) if mean_r is None else np.asarray(mean_r, dtype=float)
    start = (1.0 + discount_g_next) * mean_r
    if eta == 0:
        return solve_period_nonrobust(sigma, kappa, start, chol)

    u0 = msd_weights(chol, start, kappa)[0]
    u, theta, iters = _fixed_point(draws, chol, kappa, eta, discount_g_next, mean_r, u0, damping, tol, max_iter)
    if check_uniqueness:
        alt_u, _, _ = _fixed_point(draws, chol, kappa, eta, discount_g_next, mean_r,
                                   np.full(draws.shape[1], 1.0 / draws.shape[1]), damping, tol, max_iter)
        gap = float(np.max(np.abs(alt_u - u)))
        if gap > UNIQUENESS_TOL:
            warnings.warn(f"warm starts disagree by {gap:.3g}", MultipleSolutionsWarning, stacklevel=2)

    z = draws @ u
    theta = find_theta(z, eta, theta)
    measure = tilt_from_payoff(z, theta)
    X = (measure.weights @ draws) / draws.shape[0] + discount_g_next * mean_r
    _, a, b, h, g, S = msd_weights(chol, X, kappa)
    G = dual_value(z, theta, eta) + discount_g_next * float(mean_r @ u) - kappa * S
    return PeriodSolution(u=u, theta=theta, X=X, a=a, b=b, h=h, g=g, S=S, G=G,
                          kl_achieved=measure.kl, iterations=iters)


# -- horizon -----------------------------------------------------------------


def _period_samples(samples, N):
    if samples is None:
        return [None] * N
    if isinstance(samples, (ReturnSample, np.ndarray)):
        return [samples] * N
    samples = list(samples)
    if len(samples) != N:
        raise DataError(f"need one sample per period ({N}), got {len(samples)}")
    return samples


def _draws(s):
    return s.draws if isinstance(s, ReturnSample) else np.asarray(s, dtype=float)


def _effective_penalty(profile: RiskProfile, n: int) -> float:
    # the penalty is the product c*eta*kappa of period n+1, which vanishes with eta
    return 0.0 if profile.eta[n + 1] == 0 else float(profile.penalty[n])


def solve_horizon(
    spec: PortfolioSpec,
    model: NominalModel,
    profile: RiskProfile,
    samples=None,
    mode: str = "robust",
    **period_kw,
) -> HorizonSolution:
    """Backward induction over the horizon.

    ``samples`` is one ReturnSample per period or a single one shared by
    all periods. The continuation mean is the sample mean; in non-robust
    mode without samples it falls back to the model's gross mean.
    Robust mode discounts ``G_{n+1}`` by ``exp(-penalty[n])``, taken as zero
    when period ``n+1`` has ``eta = 0``; non-robust mode does not discount.
    """
    if mode not in ("robust", "nonrobust"):
        raise DataError(f"mode must be 'robust' or 'nonrobust', got {mode!r}")
    if not (spec.d == model.d) or not (spec.N == profile.N):
        raise DataError("spec, model and profile disagree on dimensions")
    per = _period_samples(samples, spec.N)
    if mode == "robust" and any(s is None for s in per):
        raise DataError("robust mode needs a return sample")
    for s in per:
        if s is not None and _draws(s).shape[1] != spec.d:
            raise DataError("sample column count differs from asset count")

    chol = model.chol
    sols = [None] * spec.N
    g_next = 0.0
    for n in range(spec.N - 1, -1, -1):
        s = per[n]
        mean_r = model.gross_mean if s is None else _draws(s).mean(axis=0)
        kappa = float(profile.kappa[n])
        try:
            if mode == "nonrobust":
                sol = solve_period_nonrobust(model.sigma, kappa, (1.0 + g_next) * mean_r, chol)
            else:
                disc = math.exp(-_effective_penalty(profile, n)) * g_next if n < spec.N - 1 else 0.0
                sol = solve_period(s, model.sigma, kappa, float(profile.eta[n]), disc, mean_r,
                                   chol=chol, **period_kw)
        except RobustMSDError as exc:
            exc.period = n
            raise
        log.debug("period %d: G=%.10g theta=%.6g iters=%d", n, sol.G, sol.theta, sol.iterations)
        sols[n] = sol
        g_next = sol.G

    sols = tuple(sols)
    probs = _positivity(sols, per, model)
    accepted = bool(np.all(probs > 1.0 - np.exp(-profile.kappa)))
    return HorizonSolution(periods=sols, value_at_w0=spec.W0 * sols[0].G, accepted=accepted,
                           positivity_probs=probs, W0=spec.W0)


def _positivity(periods, per_samples, model: NominalModel) -> np.ndarray:
    from scipy.stats import norm

    probs = np.empty(len(periods))
    for n, (sol, s) in enumerate(zip(periods, per_samples)):
        if s is None:
            # Gaussian nominal without draws: exact probability
            m = float(model.gross_mean @ sol.u)
            probs[n] = norm.cdf(m / sol.S)
        else:
            probs[n] = float(np.mean(_draws(s) @ sol.u > 0))
    return probs


def check_positivity(solution: HorizonSolution | Strategy, samples, profile: RiskProfile) -> tuple[bool, np.ndarray]:
    """Abandon gate: every period needs ``P(R'u_n > 0) > 1 - exp(-kappa_n)``.

    Wealth is normalised to one at each period, so only the one-period gross
    portfolio return matters.
    """
    weights = solution.strategy.weights if isinstance(solution, HorizonSolution) else solution.weights
    per = _period_samples(samples, weights.shape[0])
    if any(s is None for s in per):
        raise DataError("check_positivity needs a sample per period")
    probs = np.array([float(np.mean(_draws(s) @ weights[n] > 0)) for n, s in enumerate(per)])
    thresholds = 1.0 - np.exp(-np.asarray(profile.kappa, dtype=float))
    return bool(np.all(probs > thresholds)), probs
