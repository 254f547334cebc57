import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sll.core import ConfigError, DomainError
from sll.pdmp import (
    PdmpConfig,
    b_range,
    density_ratio,
    discretization_check,
    find_b_star,
    flow_time,
    h_theta,
    histogram_l1,
    invariant_density,
    lr_k,
    mass_ode_residual,
    mixture_lr,
    simulate_pdmp,
)

# Independent mpmath oracle (40 digits): zero-flux solution u = h_1 f_1 = -h_0 f_0,
# integrated by partial fractions in u = -log(distance to the endpoint).
ORACLE = {
    (0.2, 0.6, 0.75): dict(
        Z=18.2249550378469,
        lr=(0.509901337576886, 0.795979238674547, 1.25631417430583, 1.96116371208619),
        points={0.1: (0.5968772688097859, 1.5518808989054438),
                0.3: (0.7962134635015423, 1.2511925855024237)}),
    (0.05, 0.6, 0.8): dict(
        Z=35.6976924668102,
        lr=(0.222142433960896, 0.592647104200734, 1.68734478395645, 4.50161629261716),
        points={0.1: (0.4752674198573131, 2.376337099286568)}),
    (1.0, 0.6, 0.75): dict(
        Z=7.31830172562355,
        lr=(0.774933156371464, 0.91805941766721, 1.08925411662461, 1.2904338803651),
        points={0.3: (0.977861969075534, 1.5366402371186965)}),
    (1e-3, 0.6, 0.8): dict(
        Z=1215.50580612218,
        lr=(0.0944427524824461, 0.467946214986809, 2.13699773173331, 10.588424984605),
        points={}),
}


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


@pytest.mark.parametrize("key", list(ORACLE))
def test_densities_against_oracle(key):
    cfg = PdmpConfig(*key)
    ref = ORACLE[key]
    d = invariant_density(cfg)
    # f_1 = C exp(E) / h_1 with both states sharing C
    assert 1.0 / d.norm_constant == pytest.approx(ref["Z"], rel=1e-10)
    for k, lr in enumerate(ref["lr"]):
        assert lr_k(cfg, k) == pytest.approx(lr, rel=1e-9)
    for x, (f1, f0) in ref["points"].items():
        assert float(d.evaluate(1, x)) == pytest.approx(f1, rel=1e-9)
        assert float(d.evaluate(0, x)) == pytest.approx(f0, rel=1e-9)


@pytest.mark.parametrize("key", list(ORACLE))
def test_mass_and_ode_residual(key):
    d = invariant_density(PdmpConfig(*key))
    for theta in (0, 1):
        assert abs(d.mass(theta) - 1.0) <= 1e-8
    assert mass_ode_residual(d) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(lam=st.floats(1e-3, 2.0), pi=st.floats(0.55, 0.66), u=st.floats(0.05, 0.95))
def test_density_ratio_identity(lam, pi, u):
    lo, hi = b_range(pi)
    cfg = PdmpConfig(lam, pi, lo + u * (hi - lo))
    d = invariant_density(cfg, grid_size=512)
    x = d.x[(d.x > 1e-6) & (d.x < 1 - 1e-6)]
    f1, f0 = d.evaluate(1, x), d.evaluate(0, x)
    # large lam K pushes the densities below the float range at the ends
    ok = (f1 > 1e-250) & (f0 > 1e-250)
    x, ratio = x[ok], f1[ok] / f0[ok]
    expect = -h_theta(cfg, 0, x) / h_theta(cfg, 1, x)
    np.testing.assert_allclose(ratio, expect, rtol=1e-8)
    np.testing.assert_allclose(density_ratio(cfg, x), expect, rtol=1e-12)


def test_lr2_tends_to_one_at_lower_edge():
    # at b = 2/3 the two drifts are proportional, f_1 = f_0 and every LR_k = 1
    devs = []
    for delta in (1e-8, 1e-10):
        cfg = PdmpConfig(1e-3, 0.6, 2.0 / 3.0 + delta)
        devs.append(lr_k(cfg, 2) - 1.0)
        assert abs(devs[-1]) <= 1e-6
    # the gap closes linearly in b - 2/3
    assert devs[1] / devs[0] == pytest.approx(1e-2, rel=1e-2)


def test_lr_undefined_at_lower_edge():
    with pytest.raises(DomainError):
        invariant_density(PdmpConfig(0.1, 0.6, 2.0 / 3.0))


def test_mixture_with_atoms_only_moves_unanimous_samples():
    cfg = PdmpConfig(0.2, 0.6, 0.75)
    assert mixture_lr(cfg, 2, 0.3) == pytest.approx(lr_k(cfg, 2), rel=1e-10)
    assert mixture_lr(cfg, 3, 0.3) > lr_k(cfg, 3)
    assert mixture_lr(cfg, 0, 0.0) == pytest.approx(lr_k(cfg, 0), rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(lam=st.floats(1e-3, 1.0), u=st.floats(0.05, 0.95))
def test_lr_increasing_in_sample_count(lam, u):
    lo, hi = b_range(0.6)
    cfg = PdmpConfig(lam, 0.6, lo + u * (hi - lo))
    lr = [lr_k(cfg, k) for k in range(4)]
    assert all(a < b for a, b in zip(lr, lr[1:]))
    # mirror symmetry of the two states
    assert lr[0] * lr[3] == pytest.approx(1.0, rel=1e-8)


def test_lr2_small_lambda_limit_value():
    assert lr_k(PdmpConfig(1e-3, 0.6, 0.8), 2) == pytest.approx(2.13699773173331, rel=1e-9)


def test_flow_time_is_positive_and_additive():
    cfg = PdmpConfig(0.2, 0.6, 0.75)
    t1 = flow_time(cfg, 1, 0.2, 0.5)
    t2 = flow_time(cfg, 1, 0.5, 0.8)
    assert t1 > 0 and t2 > 0
    assert flow_time(cfg, 1, 0.2, 0.8) == pytest.approx(t1 + t2, rel=1e-9)


def test_simulated_histogram_matches_density():
    cfg = PdmpConfig(0.2, 0.6, 0.75)
    d = invariant_density(cfg)
    x, theta = simulate_pdmp(cfg, 2e5, 0.5, seed=1)
    assert np.all((x > 0) & (x < 1))
    assert histogram_l1(d, x, theta) <= 0.05


@pytest.mark.parametrize("lam", [0.05, 0.02, 0.01])
def test_b_star_is_indifferent_at_two_ones(lam):
    r = find_b_star(lam, 0.6, 0.05)
    lo, hi = b_range(0.6)
    assert lo < r.b < hi
    assert r.lr[2] == pytest.approx(r.p_hat / (1 - r.p_hat), rel=1e-9)
    assert r.ordering_holds
    assert r.beliefs[0] < 1 - r.p_hat < r.p_hat < r.beliefs[3]
    assert r.welfare > r.p_hat


def test_b_star_fails_when_switching_is_fast():
    with pytest.raises(DomainError, match="lambda too large"):
        find_b_star(5.0, 0.6, 0.05)


def test_discretized_game_approaches_limit():
    r = discretization_check(PdmpConfig(1.0, 0.6, 0.75), seed=3)
    assert r.decreasing
    assert r.tv[-1] < r.tv[0]


def test_discretized_game_at_proportional_drifts():
    # b = 2/3: both states share one stationary profile
    r = discretization_check(PdmpConfig(1.0, 0.6, 2.0 / 3.0), seed=3)
    assert r.tv == ()
    assert max(r.state_gap) < 0.02


@pytest.mark.parametrize("kwargs,field", [
    (dict(lam=0.0, pi=0.6, b=0.75), "lambda"),
    (dict(lam=0.1, pi=0.5, b=0.75), "pi"),
    (dict(lam=0.1, pi=0.6, b=0.3), "b"),
    (dict(lam=0.1, pi=0.6, b=0.9), "b"),
])
def test_config_validation(kwargs, field):
    with pytest.raises(ConfigError) as exc:
        PdmpConfig(**kwargs)
    assert exc.value.field == field


def test_precision_outside_regime_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        PdmpConfig(0.1, 0.7, 0.75)
    assert any("2/3" in str(w.message) for w in caught)


def test_lr_k_range():
    with pytest.raises(ConfigError):
        lr_k(PdmpConfig(0.2, 0.6, 0.75), 4)
