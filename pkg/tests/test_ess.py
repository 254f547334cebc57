import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from sll.core import (
    ConfigError,
    ConvergenceError,
    DomainError,
    Environment,
    Strategy,
    phi_table,
    ratio_se,
    run_chain_summary,
    value_informed,
)
from sll.ess import (
    StateMeasure,
    compare_with_simulation,
    consensus_bound,
    consensus_metric,
    default_grid,
    make_grid,
    psi1_invariant,
    psi2_beliefs,
    psi3_best_response,
    solve_ess,
    herding_exit_condition,
    welfare,
)
from sll.smallsample import solve_n1

BELIEF_TOL = 1e-6
PIN_TOL = 1e-9


def _endpoint_measure(n_nodes=257):
    grid = make_grid(n_nodes, "uniform")
    w = np.zeros((grid.size, 2))
    w[[0, -1]] = 0.25
    return StateMeasure(grid, w)


def _check_equilibrium_conditions(res, p_hat):
    """beta = 1 inside the band, beta = 0 outside, interior beta on its boundary."""
    p, lb = res.beliefs.p, res.strategy.log_beta
    inside = [(1 - p_hat - BELIEF_TOL <= pk <= p_hat + BELIEF_TOL) for pk in p]
    strict = [(1 - p_hat + BELIEF_TOL < pk < p_hat - BELIEF_TOL) for pk in p]
    for k in range(p.size):
        if res.beliefs.zero_probability[k]:
            continue
        if lb[k] == 0.0:
            assert inside[k], (k, p[k])
        elif lb[k] == -np.inf:
            assert not strict[k], (k, p[k])
        else:
            edge = p_hat if p[k] >= 0.5 else 1 - p_hat
            assert abs(p[k] - edge) <= BELIEF_TOL, (k, p[k])


# --- grids ------------------------------------------------------------------


def test_clustered_grid_is_sorted_and_symmetric():
    g = default_grid(1024)
    # x rounds to 1 near the top; order lives in the log coordinates
    assert np.all(np.diff(g.lx) > 0) and np.all(np.diff(g.l1x) < 0)
    np.testing.assert_array_equal(g.lx, g.l1x[::-1])
    assert g.x[0] == 0.0 and g.x[-1] == 1.0
    # resolves deep near the ends
    assert g.x[1] < 1e-20


def test_unknown_grid_kind_rejected():
    with pytest.raises(ConfigError):
        make_grid(64, "spiral")


# --- Psi_1 ------------------------------------------------------------------


def test_identity_map_keeps_initial_profile():
    # phi_theta(k) = k/n makes g the identity in both states
    env = Environment.binary(0.1, 0.8, 0.1, 2)
    ph = np.array([[0, 0.5, 1], [0, 0.5, 1]])
    mu = psi1_invariant(ph, env, grid=make_grid(129, "uniform"))
    assert mu.residual <= 1e-12
    inner = mu.marginal()[1:-1]
    np.testing.assert_allclose(inner, inner.mean(), rtol=1e-9)
    # state is independent of x
    np.testing.assert_allclose(mu.weights[1:-1, 0], mu.weights[1:-1, 1], rtol=1e-9)


@pytest.mark.parametrize("args", [(0.05, 0.8, 0.1, 1), (0.1, 0.8, 0.1, 2), (0.01, 0.9, 0.1, 3)])
def test_invariant_measure_mass_symmetry_and_residual(args):
    env = Environment.binary(*args)
    res = solve_ess(env)
    w = res.measure.weights
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w, w[::-1, ::-1], atol=1e-10)
    assert res.measure.residual <= 1e-9


def test_psi1_rejects_bad_table():
    with pytest.raises(ConfigError):
        psi1_invariant(np.zeros((2, 4)), Environment.binary(0.1, 0.8, 0.1, 2))


def test_herding_concentrates_at_consensus():
    # small lambda: samples are almost always unanimous
    res = solve_ess(Environment.binary(0.01, 0.8, 0.05, 2))
    ends = res.measure.x
    near = (ends < 0.01) | (ends > 0.99)
    assert res.measure.marginal()[near].sum() > 0.9
    assert res.consensus < 0.01


def test_psi1_against_simulation_spot():
    env = Environment.binary(0.1, 0.8, 0.1, 2)
    strat = Strategy([0.3, 1.0, 0.3], [0.3, 0.5, 0.7])
    mu = psi1_invariant(strat, env)
    assert compare_with_simulation(strat, env, mu, 1_000_000, seed=4) <= 0.02


# --- Psi_2 / Psi_3 ----------------------------------------------------------


def test_beliefs_at_endpoint_measure():
    env = Environment.binary(0.1, 0.8, 0.1, 2)
    b = psi2_beliefs(_endpoint_measure(), env)
    # unanimous samples are equally likely in either state; mixed ones cannot occur
    np.testing.assert_allclose(b.p, 0.5)
    assert list(b.zero_probability) == [False, True, False]


def test_beliefs_symmetric_at_equilibrium():
    res = solve_ess(Environment.binary(0.1, 0.8, 0.1, 2))
    p = res.beliefs.p
    np.testing.assert_allclose(p, 1 - p[::-1], atol=1e-8)


def test_best_response_corners_and_indifference():
    env = Environment.binary(0.05, 0.8, 0.1, 1)  # p_hat = 0.7
    assert np.all(psi3_best_response([0.4, 0.6], env).beta == 1.0)
    assert np.all(psi3_best_response([0.01, 0.99], env).beta == 0.0)
    inc = Strategy([0.3, 0.3], [0.3, 0.7])
    kept = psi3_best_response([0.3, 0.7], env, incumbent=inc)
    np.testing.assert_allclose(kept.beta, 0.3)


# --- welfare and consensus ----------------------------------------------------


def test_all_acquire_welfare_at_half():
    env = Environment.binary(0.1, 0.8, 0.1, 2)
    strat = Strategy([1.0, 1.0, 1.0], [0.5, 0.5, 0.5])
    mu = psi1_invariant(strat, env)
    w, kappa, info = welfare(strat, mu, env)
    assert info == pytest.approx(1.0, abs=1e-12)
    assert w == pytest.approx(value_informed(env.signals, 0.5) - env.cost, abs=1e-12)


def test_consensus_metric_examples():
    assert consensus_metric(_endpoint_measure()) == 0.0
    grid = make_grid(257, "uniform")
    w = np.zeros((grid.size, 2))
    w[128] = 0.5
    assert grid.x[128] == 0.5
    assert consensus_metric(StateMeasure(grid, w)) == pytest.approx(0.25)


@pytest.mark.parametrize("pi,cost,n,holds,value", [
    (0.8, 0.1, 2, True, None),
    (0.9, 0.1, 3, True, 0.81),
    (0.6, 0.05, 3, False, 2.16),
])
def test_herding_exit_condition_examples(pi, cost, n, holds, value):
    ok, v = herding_exit_condition(Environment.binary(0.01, pi, cost, n))
    assert ok is holds
    if value is not None:
        assert v == pytest.approx(value, abs=1e-12)


def test_herding_exit_condition_always_holds_for_pairs():
    for pi in (0.55, 0.7, 0.9, 0.99):
        assert herding_exit_condition(Environment.binary(0.01, pi, 0.02, 2))[0]


def test_herding_exit_condition_rejects_perfect_free_signal():
    with pytest.raises(DomainError, match="bounded-strength or costly"):
        herding_exit_condition(Environment.binary(0.01, 1.0, 0.0, 3))


# --- solver -----------------------------------------------------------------


def test_solver_reproduces_single_sample_equilibrium():
    env = Environment.binary(0.05, 0.8, 0.1, 1)
    res = solve_ess(env)
    ref = solve_n1(env)
    assert abs(res.strategy.beta[0] - 2 / 9) <= 1e-3
    assert abs(res.strategy.beta[0] - ref.beta) <= 1e-3
    assert abs(res.welfare - ref.welfare) <= 1e-3


def test_three_samples_precise_signal():
    env = Environment.binary(0.01, 0.9, 0.1, 3)
    res = solve_ess(env)
    assert res.regular
    # unanimous samples are pinned to the acquisition boundary
    assert res.beliefs.p[3] == pytest.approx(env.p_hat, abs=1e-6)
    assert res.welfare == pytest.approx(env.p_hat, abs=2e-2)
    _check_equilibrium_conditions(res, env.p_hat)


def test_welfare_matches_simulated_payoff():
    env = Environment.binary(0.1, 0.8, 0.1, 2)
    res = solve_ess(env)
    strat = res.strategy
    s = run_chain_summary(phi_table(strat, env), strat.beta, env, 2_000_000, 1000, seed=21)
    num = s.match - env.cost * s.info
    mc = float(num.sum() / s.length.sum())
    se = ratio_se(num, s.length)
    assert abs(mc - res.welfare) <= 3 * se


@pytest.mark.parametrize("args", [(0.1, 0.8, 0.1, 2), (0.01, 0.9, 0.1, 3), (0.01, 0.8, 0.05, 2)])
def test_grid_refinement_is_stable(args):
    env = Environment.binary(*args)
    coarse = solve_ess(env, grid_size=2048)
    fine = solve_ess(env, grid_size=4096)
    assert abs(coarse.welfare - fine.welfare) <= 5e-3


def test_iteration_budget_is_reported():
    with pytest.raises(ConvergenceError, match="evaluation budget"):
        solve_ess(Environment.binary(0.01, 0.9, 0.1, 3), max_evaluations=3)


def test_damping_validated():
    with pytest.raises(ConfigError):
        solve_ess(Environment.binary(0.1, 0.8, 0.1, 2), damping=1.5)


@settings(max_examples=12, deadline=None)
@given(lam=st.floats(0.005, 0.2), pi=st.sampled_from([0.7, 0.8, 0.9]),
       n=st.integers(1, 3), frac=st.floats(0.2, 0.8))
def test_solved_equilibria_satisfy_structure(lam, pi, n, frac):
    env = Environment.binary(lam, pi, frac * (pi - 0.5), n)
    try:
        res = solve_ess(env, grid_size=1024)
    except ConvergenceError:
        assume(False)
    p_hat = env.p_hat
    # some sample leaves the agent willing to acquire; pinned beliefs sit on the edge
    p = res.beliefs.p
    assert np.any((p >= 1 - p_hat - PIN_TOL) & (p <= p_hat + PIN_TOL))
    _check_equilibrium_conditions(res, p_hat)
    if n >= 2:
        # a single sample cannot produce consensus, so the bound starts at pairs
        assert res.consensus <= consensus_bound(env) + 2.0 / 1024


def test_beliefs_at_state_matched_point_masses():
    env = Environment.binary(1e-3, 0.8, 0.1, 2)
    grid = make_grid(257, "uniform")
    w = np.zeros((grid.size, 2))
    w[-1, 1] = w[0, 0] = 0.5
    b = psi2_beliefs(StateMeasure(grid, w), env)
    # only the one-period switching correction keeps the beliefs off 0 and 1
    assert b.p[2] == pytest.approx(1 - env.lam, abs=1e-12)
    assert b.p[0] == pytest.approx(env.lam, abs=1e-12)
