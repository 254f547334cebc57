"""Closed forms and simulations for samples of one and two actions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .core import (
    ConfigError,
    ConvergenceError,
    Environment,
    Strategy,
    draw_flips,
    effective_lambda,
    phi_table,
    ratio_se,
    run_chain_summary,
    value_informed,
)


@dataclass(frozen=True)
class N1Equilibrium:
    beta: float
    p1: float
    welfare: float
    regime: str  # "interior" or "full"
    lambda_star: float
    effective_lambda: float

    def strategy(self) -> Strategy:
        return Strategy([self.beta, self.beta], [1.0 - self.p1, self.p1])


def lambda_star(env: Environment) -> float:
    """Largest effective switching rate with partial acquisition."""
    return env.cost / (2.0 * (env.p_hat + env.cost) - 1.0)


def solve_n1(env: Environment) -> N1Equilibrium:
    """Closed-form stationary equilibrium for single-action samples."""
    if env.n != 1:
        raise ConfigError("n", "solve_n1 requires n = 1")
    p_hat, c = env.p_hat, env.cost
    lam_eff = effective_lambda(env.lam, env.rho)
    lam_s = lambda_star(env)
    if lam_eff <= lam_s and c > 0:
        beta = lam_eff * (2.0 * p_hat - 1.0) / (c * (1.0 - 2.0 * lam_eff))
        return N1Equilibrium(min(beta, 1.0), p_hat, p_hat, "interior", lam_s, lam_eff)

    def resid(p):
        v = value_informed(env.signals, p)
        return (1.0 - lam_eff) * v + lam_eff * (1.0 - v) - p

    lo, hi = 0.5, p_hat
    if resid(hi) >= 0.0:
        p1 = hi
    else:
        p1 = brentq(resid, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    return N1Equilibrium(1.0, p1, value_informed(env.signals, p1) - c, "full", lam_s, lam_eff)


# ---------------------------------------------------------------------------
# two-action samples: herding absorption
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AbsorptionResult:
    fraction: float
    drift: float
    drift_rho: float
    horizon: int
    paths: int
    eps: float
    final_x: np.ndarray = field(repr=False)


def herding_phi(phi1: float, rho: float = 1.0) -> np.ndarray:
    """Response table when unanimous samples are followed and mixed samples sample a signal."""
    return np.array([[0.0, 1.0 - phi1, 1.0], [0.0, phi1, 1.0]])


def n2_absorption_test(phi1: float, env: Environment, paths: int, horizon: int,
                       eps: float, seed=None, x0: float = 0.5) -> AbsorptionResult:
    """Fraction of herding paths within ``eps`` of consensus after ``horizon`` periods.

    Under herding, ``ln x`` near 0 moves by ``ln(2 phi_theta)`` a period; the
    reported ``drift`` is ``ln(2 phi_1) + ln(2 phi_0)`` and ``drift_rho`` its
    analogue for partial replacement.
    """
    if env.n != 2:
        raise ConfigError("n", "the absorption test needs n = 2")
    if not (0.0 < phi1 < 1.0):
        raise ConfigError("phi1", "must lie in (0, 1)")
    phi0 = 1.0 - phi1
    rho = env.rho
    drift = math.log(2 * phi1) + math.log(2 * phi0)
    drift_rho = math.log((1 - rho) + 2 * rho * phi1) + math.log((1 - rho) + 2 * rho * phi0)
    ph = herding_phi(phi1)
    rng = np.random.default_rng(seed)
    x = np.full(paths, float(x0))
    theta = rng.integers(0, 2, size=paths).astype(np.int64)
    logc = kernels.log_binomials(2)
    chunk = max(1, min(horizon, 4_000_000 // max(paths, 1)))
    done = 0
    while done < horizon:
        m = min(chunk, horizon - done)
        flips = draw_flips(rng, env.lam, (m, paths))
        kernels.paths_advance(ph, rho, logc, x, theta, flips)
        done += m
    absorbed = (x <= eps) | (x >= 1.0 - eps)
    return AbsorptionResult(float(absorbed.mean()), drift, drift_rho, int(horizon),
                            int(paths), float(eps), x)


# ---------------------------------------------------------------------------
# two-action samples: simulation-assisted equilibrium
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class N2Equilibrium:
    beta: float
    p2: float
    p2_se: float
    beta_se: float
    welfare: float
    welfare_se: float
    regime: str  # "interior" or "full"
    bracket: tuple[float, float]
    evaluations: list = field(repr=False)
    monotone: bool = True
    p0: float = float("nan")
    p0_se: float = float("nan")


def n2_strategy(beta_u: float, p2: float) -> Strategy:
    """``beta_u`` at unanimous samples, full acquisition at split samples."""
    return Strategy([beta_u, 1.0, beta_u], [1.0 - p2, 0.5, p2])


def _evaluate_n2(env: Environment, beta_u: float, flips, burn: int, T: int, theta0: int):
    st = n2_strategy(beta_u, env.p_hat)
    ph = phi_table(st, env)
    summ = run_chain_summary(ph, st.beta, env, T, burn, x0=0.5, theta0=theta0, flips=flips)
    return summ


def solve_n2(env: Environment, sim_budget: int = 2_000_000, seed=None,
             beta_tol: float = 1e-6, max_iter: int = 60) -> N2Equilibrium:
    """Stationary equilibrium for two-action samples by bisection on ``beta``.

    Acquisition at unanimous samples is tuned so that the simulated stationary
    belief after a unanimous sample equals ``p_hat``. All evaluations share one
    switching path (common random numbers), so the objective is a smooth
    function of ``beta``. If even full acquisition leaves the belief below
    ``p_hat``, full acquisition is the equilibrium.
    """
    if env.n != 2:
        raise ConfigError("n", "solve_n2 requires n = 2")
    rng = np.random.default_rng(seed)
    burn = int(max(1e5, 10.0 / env.lam))
    T = int(sim_budget)
    theta0 = int(rng.integers(2))
    flips = draw_flips(rng, env.lam, burn + T)
    p_hat = env.p_hat
    evals: list[tuple[float, float]] = []

    def p2_of(b):
        s = _evaluate_n2(env, b, flips, burn, T, theta0)
        p = float(s.beliefs()[2])
        evals.append((b, p))
        return p, s

    p_full, s_full = p2_of(1.0)
    if p_full <= p_hat:
        se = s_full.belief_se(2)
        if p_full < 0.5 - 5.0 * se:
            raise ConvergenceError("belief after a unanimous sample fell below 1/2",
                                   residual=0.5 - p_full, p2=p_full, p2_se=se)
        welfare, w_se = _n2_welfare(s_full, env)
        return N2Equilibrium(1.0, p_full, se, 0.0, welfare, w_se, "full",
                             (1.0, 1.0), evals, True, float(s_full.beliefs()[0]),
                             s_full.belief_se(0))
    lo, hi = 0.0, 1.0
    s = s_full
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        p, s = p2_of(mid)
        if p > p_hat:
            hi = mid
        else:
            lo = mid
        if hi - lo <= beta_tol * max(hi, 1e-3):
            break
    else:
        raise ConvergenceError("bisection on beta did not close", residual=hi - lo,
                               bracket=(lo, hi))
    beta = 0.5 * (lo + hi)
    p2, s = p2_of(beta)
    p2_se = s.belief_se(2)
    p0, p0_se = float(s.beliefs()[0]), s.belief_se(0)
    # local slope for the standard error of beta
    db = max(0.05 * beta, 1e-6)
    p_up, _ = p2_of(min(beta + db, 1.0))
    p_dn, _ = p2_of(max(beta - db, 0.0))
    slope = (p_up - p_dn) / (min(beta + db, 1.0) - max(beta - db, 0.0))
    beta_se = p2_se / slope if slope > 0 else float("inf")
    pts = sorted(evals)
    monotone = all(b[1] >= a[1] - 1e-12 for a, b in zip(pts, pts[1:]))
    welfare, w_se = _n2_welfare(s, env)
    return N2Equilibrium(beta, p2, p2_se, beta_se, welfare, w_se, "interior", (lo, hi),
                         evals, monotone, p0, p0_se)


def _n2_welfare(s, env: Environment) -> tuple[float, float]:
    num = s.match - env.cost * s.info
    return float(num.sum() / s.length.sum()), ratio_se(num, s.length)
