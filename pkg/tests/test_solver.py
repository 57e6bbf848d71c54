import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from robustmsd.core import NominalModel, PortfolioSpec, ReturnSample, RiskProfile, Strategy
from robustmsd.errors import EtaTooLargeForSample, KappaTooSmall, NoConvergence
from robustmsd.experiments import REFERENCE_MU, REFERENCE_SIGMA
from robustmsd.numerics import cholesky
from robustmsd.sampling import sample_mvn
from robustmsd.solver import (
    check_positivity,
    minimum_variance,
    msd_weights,
    solve_horizon,
    solve_inner,
    solve_period,
    solve_period_nonrobust,
    worst_case_value,
)

CHOL = cholesky(REFERENCE_SIGMA)
GROSS = 1.0 + REFERENCE_MU


@pytest.fixture(scope="module")
def big_sample():
    return sample_mvn(REFERENCE_MU, REFERENCE_SIGMA, 200_000, 2024)


def _closed_form_msd(X, kappa):
    # dense-inverse oracle, deliberately not sharing code with the solver
    si = np.linalg.inv(REFERENCE_SIGMA)
    one = np.ones(3)
    a, b, h = one @ si @ one, one @ si @ X, X @ si @ X
    s = math.sqrt((1 / a) / (1 - h / kappa**2 + b**2 / (kappa**2 * a)))
    return s / kappa * (si @ X - b * si @ one / a) + si @ one / a, s


# -- inner problem ---------------------------------------------------------------


def test_inner_constant_payoff_cannot_tilt():
    s = ReturnSample(np.ones((10, 3)))
    with pytest.raises(EtaTooLargeForSample):
        solve_inner(s, [0.3, 0.3, 0.4], 0.01)


def test_inner_eta_above_sample_limit():
    s = sample_mvn(REFERENCE_MU, REFERENCE_SIGMA, 20, 0)
    with pytest.raises(EtaTooLargeForSample):
        solve_inner(s, [0.3, 0.3, 0.4], math.log(20) + 0.01)


def test_inner_two_point_closed_form():
    delta = 0.02
    eps = 0.05
    eta = math.log(2.0) - eps
    s = ReturnSample(np.array([[1.0, 1.0], [1.0 + delta, 1.0 + delta]]))
    measure, _ = solve_inner(s, [0.5, 0.5], eta)

    # KL of a two-point tilt is log 2 minus the binary entropy of its masses
    def entropy_gap(p):
        return -(p * math.log(p) + (1 - p) * math.log(1 - p)) - eps

    p = brentq(entropy_gap, 0.5, 1 - 1e-15, xtol=1e-15)
    theta = delta / math.log(p / (1 - p))
    assert measure.theta == pytest.approx(theta, rel=1e-6)
    assert abs(measure.kl - eta) <= 1e-8


@pytest.mark.parametrize("eta", [0.001, 0.05, 0.5, 2.0])
def test_inner_binding_and_dual_identity(big_sample, eta):
    u = np.array([0.3, 0.3, 0.4])
    measure, dual = solve_inner(big_sample, u, eta)
    assert abs(measure.kl - eta) <= 1e-8
    z = big_sample.draws @ u
    # strong duality: tilted expectation equals the dual value
    assert measure.expect(z) == pytest.approx(dual, rel=1e-10)


# -- one period ------------------------------------------------------------------


def test_msd_weights_match_dense_oracle_and_identities():
    X = GROSS * 1.3
    u, a, b, h, g, S = msd_weights(CHOL, X, 3.0)
    ref_u, ref_s = _closed_form_msd(X, 3.0)
    np.testing.assert_allclose(u, ref_u, rtol=1e-9)
    assert S == pytest.approx(ref_s, rel=1e-12)
    alt = math.sqrt((1 / a) / (1 - h / 9.0 + b**2 / (9.0 * a)))
    assert abs(S - alt) <= 1e-10
    assert abs(u.sum() - 1.0) <= 1e-12
    assert S == pytest.approx(math.sqrt(u @ REFERENCE_SIGMA @ u), rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(1.0, 50.0))
def test_msd_weights_shift_invariant(c, kappa):
    u0 = msd_weights(CHOL, GROSS, kappa)[0]
    u1 = msd_weights(CHOL, GROSS + c, kappa)[0]
    assert np.max(np.abs(u0 - u1)) <= 1e-9


def test_nonrobust_large_kappa_is_minimum_variance():
    sol = solve_period_nonrobust(REFERENCE_SIGMA, 1e8, GROSS)
    np.testing.assert_allclose(sol.u, minimum_variance(REFERENCE_SIGMA), atol=1e-8)


def test_kappa_too_small():
    with pytest.raises(KappaTooSmall):
        solve_period_nonrobust(REFERENCE_SIGMA, 0.01, GROSS)


def _exchangeable_sample():
    rng = np.random.default_rng(4)
    half = 1.001 + 0.01 * rng.standard_normal((5000, 2))
    return ReturnSample(np.vstack([half, half[:, ::-1]]))


def test_exchangeable_two_assets_split_evenly():
    sigma = np.array([[1e-4, 2e-5], [2e-5, 1e-4]])
    sol = solve_period(_exchangeable_sample(), sigma, 3.0, 0.1)
    np.testing.assert_allclose(sol.u, [0.5, 0.5], atol=1e-8)
    nr = solve_period_nonrobust(sigma, 3.0, [1.001, 1.001])
    np.testing.assert_allclose(nr.u, [0.5, 0.5], atol=1e-12)


@pytest.mark.parametrize("eta", [0.005, 0.05, 0.5])
def test_robust_period_matches_gaussian_closed_form(big_sample, eta):
    # a Gaussian payoff tilts by a mean shift, so the robust optimum is the
    # plain optimum with risk aversion kappa + sqrt(2 eta)
    sol = solve_period(big_sample, REFERENCE_SIGMA, 3.0, eta)
    ref_u, ref_s = _closed_form_msd(big_sample.draws.mean(axis=0), 3.0 + math.sqrt(2 * eta))
    assert np.max(np.abs(sol.u - ref_u)) <= 5e-3
    assert sol.theta == pytest.approx(ref_s / math.sqrt(2 * eta), rel=2e-2)
    assert abs(sol.kl_achieved - eta) <= 1e-8


def test_robust_period_solution_invariants(big_sample):
    sol = solve_period(big_sample, REFERENCE_SIGMA, 3.0, 0.05, discount_g_next=0.3)
    assert abs(sol.u.sum() - 1.0) <= 1e-12
    assert 1 - sol.g / 9.0 > 0
    assert abs(sol.S - math.sqrt((1 / sol.a) / (1 - sol.g / 9.0))) <= 1e-10
    z = big_sample.draws @ sol.u
    lme = np.log(np.mean(np.exp(-(z - z.min()) / sol.theta))) - z.min() / sol.theta
    G = -sol.theta * lme + 0.3 * big_sample.draws.mean(axis=0) @ sol.u - 3.0 * sol.S - 0.05 * sol.theta
    assert sol.G == pytest.approx(G, rel=1e-9)


def test_random_probe_optimality():
    sample = sample_mvn(REFERENCE_MU, REFERENCE_SIGMA, 20_000, 77)
    sol = solve_period(sample, REFERENCE_SIGMA, 3.0, 0.05)
    best = worst_case_value(sample, sol.u, REFERENCE_SIGMA, 3.0, 0.05)
    rng = np.random.default_rng(78)
    for _ in range(1000):
        eps = rng.normal(scale=0.02, size=3)
        eps -= eps.mean()
        assert worst_case_value(sample, sol.u + eps, REFERENCE_SIGMA, 3.0, 0.05) < best


def test_no_convergence_reports_residual(big_sample):
    with pytest.raises(NoConvergence) as info:
        solve_period(big_sample, REFERENCE_SIGMA, 3.0, 0.5, max_iter=1, tol=1e-300)
    assert info.value.residual > 0


def test_uniqueness_check_quiet_on_reference(big_sample):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_period(big_sample, REFERENCE_SIGMA, 3.0, 0.2, check_uniqueness=True)


# -- horizon ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def setup():
    model = NominalModel(REFERENCE_MU, REFERENCE_SIGMA)
    samples = [sample_mvn(REFERENCE_MU, REFERENCE_SIGMA, 50_000, s) for s in range(5)]
    return model, samples


def test_horizon_single_period_base(setup):
    model, samples = setup
    sol = solve_horizon(PortfolioSpec(3, 1, 2.5), model, RiskProfile([3.0], [0.05]), samples[:1])
    p = sol.periods[0]
    single = solve_period(samples[0], REFERENCE_SIGMA, 3.0, 0.05)
    np.testing.assert_array_equal(p.u, single.u)
    assert sol.value_at_w0 == pytest.approx(2.5 * single.G, rel=1e-12)


def test_horizon_zero_eta_equals_nonrobust(setup):
    model, samples = setup
    spec = PortfolioSpec(3, 5)
    prof = RiskProfile.constant(5, 3.0, 0.0, [7.5, 8.0, 8.5, 9.0])
    r = solve_horizon(spec, model, prof, samples, "robust")
    n = solve_horizon(spec, model, prof, samples, "nonrobust")
    assert np.max(np.abs(r.strategy.weights - n.strategy.weights)) <= 1e-6
    assert abs(r.value_at_w0 - n.value_at_w0) <= 1e-6


def test_horizon_value_linear_in_wealth(setup):
    model, samples = setup
    prof = RiskProfile.constant(5, 3.0, 0.1, [7.5, 8.0, 8.5, 9.0])
    a = solve_horizon(PortfolioSpec(3, 5, 1.0), model, prof, samples)
    b = solve_horizon(PortfolioSpec(3, 5, 2.0), model, prof, samples)
    assert b.value_at_w0 == 2.0 * a.value_at_w0
    np.testing.assert_array_equal(a.strategy.weights, b.strategy.weights)
    assert a.value_at_w0 == pytest.approx(a.periods[0].G, rel=1e-15)


def test_horizon_error_carries_period(setup):
    model, samples = setup
    with pytest.raises(KappaTooSmall) as info:
        solve_horizon(PortfolioSpec(3, 5), model, RiskProfile.constant(5, 0.01, 0.1), samples)
    assert info.value.period == 4


def test_horizon_deterministic(setup):
    model, _ = setup
    prof = RiskProfile.constant(5, 3.0, 0.2, [7.5, 8.0, 8.5, 9.0])

    def run():
        samples = [sample_mvn(REFERENCE_MU, REFERENCE_SIGMA, 20_000, s) for s in range(5)]
        return solve_horizon(PortfolioSpec(3, 5), model, prof, samples)

    a, b = run(), run()
    assert a.strategy.weights.tobytes() == b.strategy.weights.tobytes()
    assert a.G.tobytes() == b.G.tobytes()


def test_positivity_gate_basic():
    samples = [ReturnSample(np.full((50, 2), 1.01))] * 2
    ok, probs = check_positivity(Strategy([[0.4, 0.6], [1.0, 0.0]]), samples, RiskProfile([3.0, 3.0], [0.0, 0.0]))
    assert ok and np.all(probs == 1.0)


def test_positivity_threshold_tightens_with_kappa():
    draws = np.ones((100, 2))
    draws[:3, 0] = -0.5
    samples = [ReturnSample(draws)]
    strat = Strategy([[1.0, 0.0]])
    assert check_positivity(strat, samples, RiskProfile([3.0], [0.0]))[0]
    assert not check_positivity(strat, samples, RiskProfile([4.0], [0.0]))[0]
