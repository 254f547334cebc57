"""The planner's strategy: acquisition linear in sample imbalance, majority-following otherwise.

Acquisition is ``beta(k) = lam/h + (2/n)(1 - lam/h) k`` for ``k <= n/2``,
mirrored above the middle. Informed agents follow their signal and
uninformed agents follow the majority of their sample. The induced dynamics
reach the correct consensus in ``O(-ln lam)`` periods after a switch, so
welfare tends to 1 at rate ``lam (1 - ln lam)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import (
    ConfigError,
    ConvergenceError,
    Environment,
    SignalModel,
    g_from_phi,
    ratio_se,
    run_chain_summary,
)

HIT_CAP = 100_000_000
MIX_THRESHOLD = 0.25


def informed_accuracy(signals: SignalModel) -> tuple[float, float]:
    """``1 - H_theta(1/2)`` per state, counting an atom at 1/2 as half."""
    out = []
    for theta in (0, 1):
        m = signals.conditional_masses(theta)
        q = signals.atoms
        out.append(float(m[q > 0.5].sum() + 0.5 * m[q == 0.5].sum()))
    return out[0], out[1]


def sigma_beta(lam: float, n: int, h: float) -> np.ndarray:
    """Acquisition probabilities ``beta(k)``, ``k = 0..n``."""
    half = n // 2
    beta = np.ones(n + 1)
    if half == 0:
        return beta
    base = lam / h
    if n % 2 == 0:
        slope = (2.0 / n) * (1.0 - base)
    else:
        # odd n: linear up to floor(n/2), where it reaches 1
        slope = (1.0 - base) / half
    for k in range(half + 1):
        beta[k] = min(base + slope * k, 1.0)
        beta[n - k] = beta[k]
    return beta


def sigma_phi(beta: np.ndarray, acc: tuple[float, float]) -> np.ndarray:
    """``phi_theta(k)`` for signal-following informed and majority-following uninformed agents."""
    n = beta.size - 1
    ph = np.empty((2, n + 1))
    for theta in (0, 1):
        for k in range(n + 1):
            if 2 * k < n:
                follow = 0.0
            elif 2 * k == n:
                follow = 0.5
            else:
                follow = 1.0
            ph[theta, k] = beta[k] * acc[theta] + (1.0 - beta[k]) * follow
    return ph


@dataclass(frozen=True, eq=False)
class PlannerStrategy:
    lam: float
    n: int
    rho: float
    h: float
    accuracy: tuple
    beta: np.ndarray
    phi: np.ndarray

    def g(self, theta: int, x):
        return g_from_phi(self.phi[theta], self.rho, x)

    def g_prime(self, theta: int, x):
        """Derivative of ``g_theta`` from first differences of ``phi``."""
        x = np.asarray(x, dtype=float)
        n = self.n
        d = np.diff(self.phi[theta])
        out = (1.0 - self.rho) + self.rho * n * (kernels.bernstein(n - 1, x) @ d)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"lam": self.lam, "n": self.n, "rho": self.rho, "h": self.h,
                "beta": self.beta.tolist(), "phi": self.phi.tolist()}


def build_sigma_lambda(env: Environment) -> PlannerStrategy:
    acc = informed_accuracy(env.signals)
    h = acc[1]
    if not env.lam < h:
        raise ConfigError("lambda", f"the planner strategy needs lambda < h = {h:.6g}")
    beta = sigma_beta(env.lam, env.n, h)
    return PlannerStrategy(env.lam, env.n, env.rho, h, acc, beta, sigma_phi(beta, acc))


def hitting_iterations(strategy: PlannerStrategy, x: float, y: float,
                       cap: int = HIT_CAP) -> float:
    """Iterations of ``g_1`` from ``x`` until reaching ``y``; ``inf`` if never (or past ``cap``)."""
    if x >= y:
        return 0
    logc = kernels.log_binomials(strategy.n)
    m = kernels.hit_count(np.ascontiguousarray(strategy.phi[1]), float(strategy.rho), logc,
                          float(x), float(y), int(cap))
    return math.inf if m < 0 else int(m)


# ---------------------------------------------------------------------------
# constants of the drift bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundConstants:
    a: float
    eps: float
    K: float
    k_min: float  # smallest K with g_1(1 - K lam) >= 1 - K lam + lam at this lam


def limit_strategy(n: int, acc: tuple[float, float]) -> PlannerStrategy:
    beta = sigma_beta(0.0, n, acc[1])
    return PlannerStrategy(0.0, n, 1.0, acc[1], acc, beta, sigma_phi(beta, acc))


def bound_constants(strategy: PlannerStrategy, scan: int = 20001) -> BoundConstants:
    """Locate ``a``, ``eps`` and ``K`` numerically from the small-``lam`` limit.

    ``a`` is a quarter of the excess slope ``2h - 1`` at 0, ``eps`` the last
    grid point below which ``g_1' > 1 + 2a`` and ``g_0' < 1 - 2a``, and
    ``K = 1/(2 a h)``.
    """
    h = strategy.h
    lim = limit_strategy(strategy.n, strategy.accuracy)
    a = (2.0 * h - 1.0) / 4.0
    xs = np.linspace(0.0, 0.5, scan)
    ok = (lim.g_prime(1, xs) > 1 + 2 * a) & (lim.g_prime(0, xs) < 1 - 2 * a)
    bad = np.flatnonzero(~ok)
    eps = float(xs[bad[0] - 1]) if bad.size else 0.5
    K = 1.0 / (2.0 * a * h)
    return BoundConstants(a, eps, K, _k_min(strategy))


def _k_min(strategy: PlannerStrategy) -> float:
    lam = strategy.lam
    if lam <= 0:
        return float("nan")

    def slack(K):
        z = 1.0 - K * lam
        return strategy.g(1, z) - z - lam

    hi = 1.0
    while slack(hi) < 0:
        hi *= 2.0
        if hi * lam >= 0.5:
            return math.inf
    lo = 0.0 if slack(0.0) >= 0 else None
    if lo is not None:
        return 0.0
    lo = hi / 2.0
    while slack(lo) >= 0 and lo > 1e-12:
        lo /= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if slack(mid) >= 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-12 * hi:
            break
    return hi


def auxiliary_mismatch(strategy: PlannerStrategy, tol: float = 1e-16) -> float:
    """``sum_l lam (1-lam)^l (1 - g_1^l(0))``: mismatch of the chain reset to the wrong consensus."""
    lam = strategy.lam
    x, w, total = 0.0, lam, 0.0
    for _ in range(HIT_CAP):
        total += w * (1.0 - x)
        xn = strategy.g(1, x)
        if abs(xn - x) <= tol:
            # fixed point reached: the rest is a geometric tail
            return total + (w * (1.0 - lam) / lam) * (1.0 - xn)
        x = xn
        w *= 1.0 - lam
        if w < 1e-300:
            return total
    raise ConvergenceError("auxiliary iteration did not settle", residual=abs(xn - x))


def concavity_gaps(strategy: PlannerStrategy, points: int = 4001) -> tuple[float, float]:
    """Largest second difference of ``g_1`` and smallest of ``g_0`` on a uniform grid."""
    xs = np.linspace(0.0, 1.0, points)
    d1 = np.diff(strategy.g(1, xs), 2)
    d0 = np.diff(strategy.g(0, xs), 2)
    return float(d1.max()), float(d0.min())


# ---------------------------------------------------------------------------
# welfare
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannerReport:
    lam: float
    rho: float
    welfare: float
    welfare_se: float
    match_rate: float  # newcomers playing the state
    match_se: float
    info_rate: float
    info_se: float
    mismatch: float  # mean |theta - x|
    mismatch_se: float
    m_hit: float
    constants: BoundConstants
    auxiliary: float  # mismatch bound from the reset chain
    hitting_bound: float  # lam (K + m_hit)
    analytic_welfare: float  # welfare lower bound using ``auxiliary``
    info_bound: float
    replacement_gap: float  # I_1 - (I_0 - 2 lam (1-rho)/rho)
    periods: int
    strategy: PlannerStrategy = field(repr=False)

    @property
    def loss_scale(self) -> float:
        return self.lam * (1.0 - math.log(self.lam))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "lam", "rho", "welfare", "welfare_se", "match_rate", "match_se", "info_rate",
            "info_se", "mismatch", "mismatch_se", "m_hit", "auxiliary", "hitting_bound",
            "analytic_welfare", "info_bound", "replacement_gap", "periods")}
        d["constants"] = vars(self.constants).copy()
        d["beta"] = self.strategy.beta.tolist()
        return d


def planner_welfare(env: Environment, sim_budget: int = 1_000_000, seed=None,
                    n_batches: int = 100) -> PlannerReport:
    """Long-run welfare of the planner's strategy, by simulation and by the analytic bound.

    The run lasts ``max(sim_budget, 100/lam)`` periods after ``10/lam`` of
    burn-in. With ``rho < 1`` the match rate of newcomers differs from
    ``1 - E|theta - x|``; both are reported and ``replacement_gap`` measures the
    correction.
    """
    st = build_sigma_lambda(env)
    lam, c, n = env.lam, env.cost, env.n
    T = int(max(sim_budget, math.ceil(100.0 / lam)))
    burn = int(math.ceil(10.0 / lam))
    s = run_chain_summary(st.phi, st.beta, env, T, burn, seed=seed, n_batches=n_batches)
    mism = s.mean("mismatch")
    if mism > MIX_THRESHOLD:
        raise ConvergenceError("population does not track the state", residual=mism,
                               mismatch=mism)
    num = s.match - c * s.info
    welfare = float(num.sum() / s.length.sum())
    consts = bound_constants(st)
    m_hit = hitting_iterations(st, 0.0, 1.0 - consts.K * lam)
    aux = auxiliary_mismatch(st)
    beta0 = float(st.beta[0])
    fact = math.factorial(n + 1)
    analytic = 1.0 - aux - c * (2.0 * beta0 + fact * aux)
    if env.rho < 1.0:
        analytic -= 2.0 * lam * (1.0 - env.rho) / env.rho
    match = s.mean("match")
    i0 = 1.0 - mism
    corr = 2.0 * lam * (1.0 - env.rho) / env.rho
    return PlannerReport(
        lam=lam, rho=env.rho, welfare=welfare, welfare_se=ratio_se(num, s.length),
        match_rate=match, match_se=s.mean_se("match"), info_rate=s.mean("info"),
        info_se=s.mean_se("info"), mismatch=mism, mismatch_se=s.mean_se("mismatch"),
        m_hit=m_hit, constants=consts, auxiliary=aux,
        hitting_bound=lam * (consts.K + m_hit), analytic_welfare=analytic,
        info_bound=2.0 * beta0 + fact * (1.0 - match), replacement_gap=match - (i0 - corr),
        periods=s.periods, strategy=st)


def fit_loss_constant(reports) -> float:
    """Smallest ``A`` with ``1 - W <= A lam (1 - ln lam)`` on every report."""
    return max((1.0 - r.welfare) / r.loss_scale for r in reports)
