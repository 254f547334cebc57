import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sll.core import Environment, SignalModel
from sll.planner import (
    auxiliary_mismatch,
    bound_constants,
    build_sigma_lambda,
    concavity_gaps,
    fit_loss_constant,
    hitting_iterations,
    informed_accuracy,
    planner_welfare,
    sigma_beta,
)


def _env(lam, n=4, rho=1.0):
    return Environment.binary(lam, 0.8, 0.1, n, rho=rho)


def test_beta_is_linear_in_imbalance():
    st_ = build_sigma_lambda(_env(0.01))
    np.testing.assert_allclose(st_.beta, [0.0125, 0.50625, 1.0, 0.50625, 0.0125], atol=1e-15)


def test_beta_odd_and_single_sample():
    np.testing.assert_allclose(sigma_beta(0.08, 3, 0.8), [0.1, 1.0, 1.0, 0.1])
    np.testing.assert_array_equal(sigma_beta(0.08, 1, 0.8), [1.0, 1.0])


def test_informed_accuracy_counts_half_atom():
    sig = SignalModel.tabulated([(0.2, 0.25), (0.5, 0.5), (0.8, 0.25)])
    acc0, acc1 = informed_accuracy(sig)
    # P(q > 1/2 | theta = 1) + P(q = 1/2 | theta = 1) / 2
    assert acc1 == pytest.approx(0.4 + 0.25)
    assert acc0 == pytest.approx(0.1 + 0.25)


def test_unanimous_wrong_sample_leaks_exactly_lambda():
    st_ = build_sigma_lambda(_env(0.01))
    # beta(0) h = lam: only acquirers move the population off the wrong consensus
    assert st_.g(1, 0.0) == pytest.approx(0.01, abs=1e-15)
    assert st_.g(0, 1.0) == pytest.approx(0.99, abs=1e-15)


def test_slope_at_zero_tends_to_twice_accuracy():
    st_ = build_sigma_lambda(_env(1e-6))
    assert st_.g_prime(1, 0.0) == pytest.approx(2 * 0.8, abs=1e-5)


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(1e-4, 0.2), x=st.floats(0.0, 1.0))
def test_states_mirror_each_other(lam, x):
    st_ = build_sigma_lambda(_env(lam))
    assert st_.g(1, x) == pytest.approx(1 - st_.g(0, 1 - x), abs=1e-12)
    assert 0.0 <= st_.g(1, x) <= 1.0


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(1e-4, 0.2), n=st.sampled_from([2, 4, 6]))
def test_g1_concave_g0_convex(lam, n):
    d1, d0 = concavity_gaps(build_sigma_lambda(_env(lam, n=n)))
    assert d1 <= 1e-9
    assert d0 >= -1e-9


def test_hitting_time_zero_when_already_there():
    st_ = build_sigma_lambda(_env(0.01))
    assert hitting_iterations(st_, 0.7, 0.6) == 0
    assert hitting_iterations(st_, 0.0, 0.5) > 0


def test_hitting_time_infinite_when_unreachable():
    st_ = build_sigma_lambda(_env(0.01))
    # g_1 has a fixed point just below 1, so 1 itself is never reached
    assert math.isinf(hitting_iterations(st_, 0.0, 1.0, cap=10_000))


def test_bound_constants():
    st_ = build_sigma_lambda(_env(1e-3))
    c = bound_constants(st_)
    assert c.a == pytest.approx(0.15)
    assert c.K == pytest.approx(1 / (2 * 0.15 * 0.8))
    assert 0.3 < c.eps < 0.35
    # the drift condition holds at K, so the smallest working constant is no larger
    assert c.k_min <= c.K
    z = 1 - c.K * 1e-3
    assert st_.g(1, z) >= z + 1e-3


@pytest.fixture(scope="module")
def reports():
    return [planner_welfare(_env(lam), sim_budget=1_000_000, seed=1) for lam in (1e-2, 1e-3)]


def test_simulated_mismatch_below_auxiliary_bound(reports):
    for r in reports:
        assert r.mismatch <= r.auxiliary + 3 * r.mismatch_se


def test_information_rate_below_bound(reports):
    for r in reports:
        assert r.info_rate <= r.info_bound


def test_welfare_beats_equilibrium_threshold(reports):
    # the planner does better than any regular equilibrium's p_hat
    for r in reports:
        assert r.welfare > 0.7 + 3 * r.welfare_se
    assert reports[1].welfare > reports[0].welfare


def test_analytic_bound_below_simulation(reports):
    for r in reports:
        assert r.analytic_welfare <= r.welfare + 3 * r.welfare_se


def test_fitted_constant_covers_every_report(reports):
    A = fit_loss_constant(reports)
    for r in reports:
        assert 1 - r.welfare <= A * r.loss_scale + 1e-15


def test_auxiliary_is_positive_and_small():
    aux = auxiliary_mismatch(build_sigma_lambda(_env(1e-3)))
    assert 0 < aux < 0.05


def test_partial_replacement_gap_positive():
    r = planner_welfare(_env(1e-3, rho=0.5), sim_budget=1_000_000, seed=2)
    assert r.replacement_gap > 0
    assert r.welfare > 0.9


def test_report_serializes():
    r = planner_welfare(_env(1e-2), sim_budget=100_000, seed=3)
    d = r.to_dict()
    assert d["lam"] == 1e-2
    assert set(d["constants"]) == {"a", "eps", "K", "k_min"}
