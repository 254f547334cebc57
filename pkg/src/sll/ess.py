"""Equilibrium steady states for general sample sizes.

The stationary measure over ``(theta, x)`` lives on a node set in [0, 1] that
contains both endpoints and is symmetric under ``x -> 1-x``. Nodes carry exact
``log x`` and ``log(1-x)``: a uniform band covers the bulk of [0, 1], and
log-spaced tails reach distances from consensus far below the double range.
Equilibrium acquisition after unanimous samples shrinks like ``exp(-C/lam)``,
so near-consensus states sit at such distances when ``lam`` is small.

Images ``g_theta(x_i)`` are computed in log form and split between the two
neighbouring nodes: linearly in ``x`` inside the uniform band (preserving
mass and mean) and linearly in log-distance inside the tails (preserving the
drift of the multiplicative escape dynamics).

The invariant measure is found by iterating over state sojourns: within a
sojourn in ``theta`` the measure solves ``(I - (1-lam) P_theta^T) m = rhs``,
whose LU factors have no fill because ``g_theta`` is monotone. Each sweep
advances the chain by a whole switch for the price of two triangular solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spl
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import kernels
from .core import (
    ConfigError,
    ConvergenceError,
    DomainError,
    Environment,
    Strategy,
    effective_lambda,
    log_phi_tables,
    phi_table,
    simulate_chain,
    value_informed,
)

PIN_TOL = 1e-11
JOIN = 1e-3
LOG_BETA_MIN = -20000.0
ZERO_SAMPLE = 1e-13
STALL_LOG_BETA = -40.0
MAX_SWEEPS = 5000


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Grid:
    """Symmetric node set; node ``N-1-i`` is the mirror image of node ``i``."""

    x: np.ndarray
    lx: np.ndarray
    l1x: np.ndarray
    kind: str
    floor: float

    @property
    def size(self) -> int:
        return self.x.size


def make_grid(M: int = 4096, kind: str = "clustered", floor: float = -60.0,
              log_step: float = 0.5) -> Grid:
    """Build a symmetric node set.

    ``"uniform"`` gives about ``M`` equispaced nodes. ``"clustered"`` adds
    log-spaced tails from distance ``exp(floor)`` up to ``JOIN`` from either
    endpoint, ``log_step`` apart, below an equispaced band of about ``M`` nodes.
    """
    if M < 8:
        raise ConfigError("grid_size", "need at least 8 nodes")
    h = M // 2
    with np.errstate(divide="ignore"):
        if kind == "uniform":
            low_x = np.linspace(0.0, 0.5, h, endpoint=False)
            low_lx = np.log(low_x)
            low_l1x = np.log1p(-low_x)
        elif kind == "clustered":
            if not floor < math.log(JOIN) - log_step:
                raise ConfigError("floor", "log floor must lie below the uniform band")
            tail = np.arange(floor, math.log(JOIN), log_step)
            band = np.linspace(JOIN, 0.5, h, endpoint=False)
            low_lx = np.concatenate([[-np.inf], tail, np.log(band)])
            low_l1x = np.concatenate([[0.0], np.log1p(-np.exp(tail)), np.log1p(-band)])
            low_x = np.exp(low_lx)
        else:
            raise ConfigError("grid_kind", f"unknown grid kind {kind!r}")
    half = math.log(0.5)
    lx = np.concatenate([low_lx, [half], low_l1x[::-1]])
    l1x = np.concatenate([low_l1x, [half], low_lx[::-1]])
    x = np.concatenate([low_x, [0.5], 1.0 - low_x[::-1]])
    return Grid(x, lx, l1x, kind, float(floor))


_GRID_CACHE: dict = {}


def default_grid(M: int = 4096, kind: str = "clustered", floor: float = -60.0) -> Grid:
    key = (M, kind, float(floor))
    if key not in _GRID_CACHE:
        if len(_GRID_CACHE) > 16:
            _GRID_CACHE.clear()
        _GRID_CACHE[key] = make_grid(M, kind, floor)
    return _GRID_CACHE[key]


_BASIS_CACHE: dict = {}


def _log_basis(grid: Grid, n: int) -> np.ndarray:
    """``log C(n,k) x^k (1-x)^(n-k)`` at every node."""
    key = (id(grid), n)
    hit = _BASIS_CACHE.get(key)
    if hit is not None and hit[0] is grid:
        return hit[1]
    k = np.arange(n + 1)
    logc = kernels.log_binomials(n)
    with np.errstate(invalid="ignore"):
        a = np.where(k > 0, k * grid.lx[:, None], 0.0)
        b = np.where(k < n, (n - k) * grid.l1x[:, None], 0.0)
    lb = logc + a + b
    if len(_BASIS_CACHE) > 32:
        _BASIS_CACHE.clear()
    _BASIS_CACHE[key] = (grid, lb)
    return lb


def basis(grid: Grid, n: int) -> np.ndarray:
    """Binomial weights ``C(n,k) x^k (1-x)^(n-k)`` at every node."""
    return np.exp(_log_basis(grid, n))


# ---------------------------------------------------------------------------
# transition operator
# ---------------------------------------------------------------------------


def _locate_low(grid: Grid, ly: np.ndarray):
    """Lower neighbour and split fraction for points ``exp(ly)`` below 1/2."""
    L = grid.size // 2 + 1
    if grid.kind == "uniform":
        low = grid.x[:L]
        y = np.exp(ly)
        j = np.clip(np.searchsorted(low, y, side="right") - 1, 0, L - 2)
        return j, np.clip((y - low[j]) / (low[j + 1] - low[j]), 0.0, 1.0)
    low = grid.lx[:L]
    y = np.exp(ly)
    band = ly >= math.log(JOIN)
    j = np.clip(np.searchsorted(low, ly, side="right") - 1, 0, L - 2)
    with np.errstate(invalid="ignore", over="ignore"):
        f_log = (ly - low[j]) / (low[j + 1] - low[j])
        f_first = np.exp(ly - low[1])  # interval [0, first tail node]
        f_lin = (y - grid.x[j]) / (grid.x[j + 1] - grid.x[j])
    f = np.where(band, f_lin, np.where(j == 0, f_first, f_log))
    return j, np.clip(np.nan_to_num(f, nan=0.0), 0.0, 1.0)


def _locate(grid: Grid, ly: np.ndarray, l1y: np.ndarray):
    """Neighbour pair ``(j, j+1)`` and the fraction of mass sent to ``j+1``."""
    N = grid.size
    j = np.empty(ly.size, dtype=np.int64)
    f = np.empty(ly.size)
    low = ly <= l1y
    j[low], f[low] = _locate_low(grid, ly[low])
    jc, fc = _locate_low(grid, l1y[~low])
    j[~low] = N - 2 - jc
    f[~low] = 1.0 - fc
    return j, f


def _images(grid: Grid, lphi_row: np.ndarray, lcphi_row: np.ndarray, rho: float, n: int):
    """``log g(x_i)`` and ``log(1 - g(x_i))`` at every node."""
    lb = _log_basis(grid, n)
    lr = math.log(rho)
    lkeep = math.log1p(-rho) if rho < 1.0 else -np.inf
    ly = logsumexp(np.column_stack([lkeep + grid.lx, lr + lb + lphi_row]), axis=1)
    l1y = logsumexp(np.column_stack([lkeep + grid.l1x, lr + lb + lcphi_row]), axis=1)
    return ly, l1y


def _csr(j: np.ndarray, f: np.ndarray, N: int) -> sp.csr_matrix:
    r = np.arange(N)
    return sp.csr_matrix(
        (np.concatenate([1.0 - f, f]), (np.concatenate([r, r]), np.concatenate([j, j + 1]))),
        shape=(N, N),
    )


def _log_tables_from_phi(phi_tab: np.ndarray):
    symmetric = bool(np.allclose(phi_tab[0], 1.0 - phi_tab[1][::-1], atol=1e-12, rtol=0.0))
    with np.errstate(divide="ignore"):
        lphi = np.log(phi_tab)
        lcphi = np.log(phi_tab[::-1, ::-1]) if symmetric else np.log1p(-phi_tab)
    return lphi, lcphi, symmetric


class _Operator:
    """Discretized transition for a fixed behaviour rule."""

    def __init__(self, grid: Grid, lphi, lcphi, symmetric: bool, lam: float, rho: float, n: int):
        self.lam = lam
        N = grid.size
        with np.errstate(divide="ignore", invalid="ignore"):
            j1, f1 = _locate(grid, *_images(grid, lphi[1], lcphi[1], rho, n))
            if symmetric:
                # exact mirror image of the state-1 map
                j0 = (N - 2 - j1)[::-1]
                f0 = (1.0 - f1)[::-1]
            else:
                j0, f0 = _locate(grid, *_images(grid, lphi[0], lcphi[0], rho, n))
        self.P = [_csr(j0, f0, N), _csr(j1, f1, N)]
        eye = sp.identity(N, format="csc")
        self.lu = [spl.splu((eye - (1.0 - lam) * P.T).tocsc(), permc_spec="NATURAL")
                   for P in self.P]

    def apply(self, w: np.ndarray) -> np.ndarray:
        lam = self.lam
        out = np.empty_like(w)
        for theta in (0, 1):
            mix = (1.0 - lam) * w[:, theta] + lam * w[:, 1 - theta]
            out[:, theta] = self.P[theta].T @ mix
        return out

    def residual(self, w: np.ndarray) -> float:
        return float(np.abs(self.apply(w) - w).max())


# ---------------------------------------------------------------------------
# Psi_1: invariant measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateMeasure:
    """Stationary measure; ``weights[i, theta]`` is the mass at node ``i``."""

    grid: Grid
    weights: np.ndarray
    residual: float = 0.0
    iterations: int = 0

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def marginal(self) -> np.ndarray:
        return self.weights.sum(1)


def required_floor(lphi: np.ndarray, rho: float, margin: float = 30.0) -> float:
    """Log floor deep enough to resolve the smallest image ``g_theta(0)``."""
    low = float(np.min(lphi[:, 0]))
    base = -60.0
    if np.isfinite(low):
        base = min(base, low + math.log(rho) - margin)
    return max(base, LOG_BETA_MIN - 2 * margin)


def _tables(strategy, env: Environment):
    if isinstance(strategy, Strategy):
        lphi, lcphi = log_phi_tables(strategy, env)
        return lphi, lcphi, True
    ph = np.asarray(strategy, dtype=float)
    if ph.shape != (2, env.n + 1):
        raise ConfigError("phi", f"expected shape (2, {env.n + 1})")
    return _log_tables_from_phi(ph)


def psi1_invariant(strategy, env: Environment, grid_size: int = 4096, *,
                   grid: Grid | None = None, init: StateMeasure | None = None,
                   tol: float = 1e-10, max_sweeps: int = 20000, symmetrize: bool = True,
                   grid_kind: str = "clustered") -> StateMeasure:
    """Invariant measure of the state/behaviour chain under ``strategy``.

    ``strategy`` may be a :class:`Strategy` or a ``(2, n+1)`` response table.
    When several invariant measures exist (absorbing consensus atoms, or the
    identity map), the result is the limit reached from the interior part of
    ``init``, uniform by default.
    """
    lphi, lcphi, symmetric = _tables(strategy, env)
    if grid is None:
        floor = math.floor(required_floor(lphi, env.rho)) if grid_kind == "clustered" else -60
        grid = default_grid(grid_size, grid_kind, floor)
    op = _Operator(grid, lphi, lcphi, symmetric, env.lam, env.rho, env.n)
    N = grid.size
    w = None
    if init is not None and init.grid is grid:
        # consensus atoms can be invariant; start from interior mass only
        w = np.array(init.weights, dtype=float)
        w[[0, -1]] = 0.0
        if w.sum() < 1e-6:
            w = None
    if w is None:
        w = np.full((N, 2), 1.0)
        w[[0, -1]] = 0.0
    w /= w.sum()
    lam = env.lam
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        m1 = op.lu[1].solve(lam * (op.P[1].T @ w[:, 0]))
        m0 = op.lu[0].solve(lam * (op.P[0].T @ m1))
        new = np.column_stack([m0, m1])
        np.maximum(new, 0.0, out=new)
        new /= new.sum()
        delta = float(np.abs(new - w).max())
        w = new
        if delta <= 1e-3 * tol or (sweeps % 20 == 0 and op.residual(w) <= tol):
            break
    if symmetrize and symmetric:
        w = 0.5 * (w + w[::-1, ::-1])
    res = op.residual(w)
    if not res <= tol:
        raise ConvergenceError("invariant measure did not converge", residual=res,
                               iterations=sweeps)
    return StateMeasure(grid, w, res, sweeps)


# ---------------------------------------------------------------------------
# Psi_2 and Psi_3
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Beliefs:
    """Stationary beliefs after each sample count."""

    p: np.ndarray
    likelihood_ratio: np.ndarray
    sample_prob: np.ndarray
    zero_probability: np.ndarray


def sample_probabilities(measure: StateMeasure, n: int) -> np.ndarray:
    """Joint masses ``P(theta_prev, k)`` shaped ``(2, n+1)``."""
    return (basis(measure.grid, n).T @ measure.weights).T


def psi2_beliefs(measure: StateMeasure, env: Environment) -> Beliefs:
    """Bayes-consistent beliefs ``p_k`` given the stationary measure.

    Samples whose probability is negligible (below ``ZERO_SAMPLE`` relative to
    the likeliest sample, where the measure cannot resolve them) get belief
    1/2 and are flagged.
    """
    joint = sample_probabilities(measure, env.n)
    tot = joint.sum(0)
    zero = tot <= ZERO_SAMPLE * tot.max()
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(zero, 0.5, joint[1] / np.where(zero, 1.0, tot))
        mass = measure.weights.sum(0)
        lr = (joint[1] / mass[1]) / (joint[0] / mass[0])
    lam = env.lam
    p = np.where(zero, 0.5, (1.0 - lam) * q + lam * (1.0 - q))
    return Beliefs(p, lr, tot, zero)


def _boundary_gap(p: float, p_hat: float) -> float:
    """Positive when acquisition is strictly optimal, zero at indifference."""
    if p >= 0.5:
        return p_hat - p
    return p - (1.0 - p_hat)


def psi3_best_response(beliefs, env: Environment, incumbent: Strategy | None = None,
                       tol: float = PIN_TOL) -> Strategy:
    """Acquire inside (1-p_hat, p_hat), never outside; keep ``incumbent`` at indifference."""
    p = np.asarray(beliefs.p if isinstance(beliefs, Beliefs) else beliefs, dtype=float)
    n = p.size - 1
    inc = np.zeros(n + 1) if incumbent is None else incumbent.log_beta
    gap = np.array([_boundary_gap(pk, env.p_hat) for pk in p])
    lb = np.where(gap > tol, 0.0, np.where(gap < -tol, -np.inf, inc))
    p = 0.5 * (p + 1.0 - p[::-1])
    tie = None if incumbent is None else incumbent.tie
    return Strategy(None, p, tie, log_beta=lb)


def welfare(strategy, measure: StateMeasure, env: Environment, phi_tab=None):
    """Per-period payoff, match rate and acquisition rate at the steady state.

    Returns ``(w, kappa, info_rate)`` with ``w = kappa - cost * info_rate``.
    """
    if phi_tab is None:
        phi_tab = phi_table(strategy, env)
    beta = strategy.beta if isinstance(strategy, Strategy) else np.asarray(strategy, float)
    B = basis(measure.grid, env.n)
    w = measure.weights
    lam = env.lam
    kappa = 0.0
    for theta in (0, 1):
        mixed = (1.0 - lam) * w[:, theta] + lam * w[:, 1 - theta]
        chi = B @ phi_tab[theta]
        kappa += float(mixed @ (chi if theta == 1 else 1.0 - chi))
    info = float(w.sum(1) @ (B @ beta))
    return kappa - env.cost * info, kappa, info


def consensus_metric(measure: StateMeasure) -> float:
    """``E[x (1-x)]`` under the stationary measure."""
    x = measure.grid.x
    return float(measure.weights.sum(1) @ (x * (1.0 - x)))


def consensus_bound(env: Environment) -> float:
    """Upper bound ``(3 / (2 d)) * Lambda`` with ``d = v(1/2) - c - 1/2``."""
    d = value_informed(env.signals, 0.5) - env.cost - 0.5
    if d <= 0:
        raise DomainError("the bound needs v(1/2) - c > 1/2")
    return 1.5 / d * effective_lambda(env.lam, env.rho)


def herding_exit_condition(env: Environment) -> tuple[bool, float]:
    """Product condition under which herding at unanimous samples cannot persist.

    Returns ``(holds, value)`` with
    ``value = (1-rho+n rho H_0(1-p_hat)) (1-rho+n rho H_1(1-p_hat))``;
    the condition requires ``value < 1``.
    """
    if env.p_hat >= 1.0:
        raise DomainError("condition requires bounded-strength or costly signals (p_hat = 1)")
    q = 1.0 - env.p_hat
    n, rho = env.n, env.rho
    a0 = 1.0 - rho + n * rho * env.signals.cdf(0, q)
    a1 = 1.0 - rho + n * rho * env.signals.cdf(1, q)
    value = float(np.asarray(a0 * a1).item())
    return value < 1.0, value


# ---------------------------------------------------------------------------
# fixed point
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ESSResult:
    strategy: Strategy
    measure: StateMeasure
    beliefs: Beliefs
    welfare: float
    kappa: float
    info_rate: float
    consensus: float
    residual: float
    iterations: int
    evaluations: int
    regular: bool
    history: list = field(default_factory=list, repr=False)

    @property
    def p(self) -> np.ndarray:
        return self.beliefs.p

    @property
    def log_beta(self) -> np.ndarray:
        return self.strategy.log_beta


class _Evaluator:
    """Runs Psi_1 and Psi_2, deepening the grid when acquisition gets tiny."""

    def __init__(self, env: Environment, grid_size: int, grid_kind: str, max_evals: int):
        self.env = env
        self.max_evals = max_evals
        self.grid_size = grid_size
        self.grid_kind = grid_kind
        self.floor = -60.0
        self.grid = default_grid(grid_size, grid_kind, self.floor)
        self.count = 0
        self.last = None

    def __call__(self, lbeta: np.ndarray, p_alpha: np.ndarray, tie: np.ndarray):
        st = Strategy(None, p_alpha, tie, log_beta=lbeta)
        if self.grid_kind == "clustered":
            lphi, _ = log_phi_tables(st, self.env)
            need = required_floor(lphi, self.env.rho)
            if need < self.floor:
                self.floor = float(math.floor(min(need, 1.5 * self.floor)))
                self.grid = default_grid(self.grid_size, self.grid_kind, self.floor)
                self.last = None
        if self.count >= self.max_evals:
            raise ConvergenceError("equilibrium search exhausted its evaluation budget",
                                   evaluations=self.count, log_beta=list(lbeta))
        init = None if self.last is None else self.last[0]
        mu = psi1_invariant(st, self.env, grid=self.grid, init=init, max_sweeps=MAX_SWEEPS)
        bel = psi2_beliefs(mu, self.env)
        self.count += 1
        self.last = (mu, bel)
        return mu, bel


def _nr_residual(lbeta: np.ndarray, p: np.ndarray, p_hat: float, free: list[int],
                 stalled=frozenset()) -> float:
    # natural residual of the box-constrained complementarity problem
    r = 0.0
    beta = np.exp(lbeta)
    for k in free:
        gap = _boundary_gap(p[k], p_hat)
        r = max(r, abs(beta[k] - min(1.0, max(0.0, beta[k] + gap))))
        if np.isfinite(lbeta[k]) and gap < -PIN_TOL and beta[k] < 1e-12 and k not in stalled:
            # tiny acquisition that still moves beliefs has not been pinned yet
            r = max(r, abs(gap))
    return r


def solve_ess(env: Environment, grid_size: int = 4096, damping: float = 0.3,
              tol: float = 1e-8, max_iter: int = 200, init: Strategy | None = None,
              grid_kind: str = "clustered", snap: float = 1e-7,
              max_evaluations: int = 400) -> ESSResult:
    """Stationary equilibrium by damped best response with pinned indifference.

    Acquisition at samples ``k > n/2`` is unknown; the rest follows by
    symmetry, and ``k = n/2`` has belief 1/2 so it always acquires. Each sweep
    visits the unknowns from the unanimous sample down. A coordinate first
    takes a damped step toward its best-response corner; later steps shrink
    the distance to that corner geometrically in log scale. Once the
    stationary belief crosses ``p_hat`` between two steps, a bracketed root
    search in ``log beta`` pins it to the boundary.
    """
    if not 0.0 < damping < 1.0:
        raise ConfigError("damping", "must lie in (0, 1)")
    n = env.n
    p_hat = env.p_hat
    free = [k for k in range(n, -1, -1) if k > n / 2]
    if init is None:
        lbeta = np.zeros(n + 1)
        p_alpha = np.array([1.0 - p_hat if k < n / 2 else (p_hat if k > n / 2 else 0.5)
                            for k in range(n + 1)])
        tie = np.full(n + 1, 0.5)
    else:
        lbeta, p_alpha, tie = init.log_beta.copy(), init.beliefs.copy(), init.tie.copy()
    if n % 2 == 0:
        lbeta[n // 2] = 0.0
    ev = _Evaluator(env, grid_size, grid_kind, max_evaluations)
    history = []
    residual = float("inf")
    mu, bel = ev(lbeta, p_alpha, tie)
    stalled: set[int] = set()
    for it in range(1, max_iter + 1):
        for k in free:
            if k in stalled and _boundary_gap(bel.p[k], p_hat) < 0:
                continue
            mu, bel, lbeta, stall = _solve_coordinate(ev, lbeta, p_alpha, tie, k, bel, mu,
                                                      p_hat, damping, snap)
            if stall:
                stalled.add(k)
            else:
                stalled.discard(k)
        # decision beliefs follow the stationary ones
        p_new = 0.5 * (bel.p + 1.0 - bel.p[::-1])
        phi_old = phi_table(Strategy(None, p_alpha, tie, log_beta=lbeta), env)
        phi_new = phi_table(Strategy(None, p_new, tie, log_beta=lbeta), env)
        alpha_shift = float(np.abs(phi_new - phi_old).max())
        p_alpha = p_new
        if alpha_shift > 0.0:
            mu, bel = ev(lbeta, p_alpha, tie)
        residual = max(_nr_residual(lbeta, bel.p, p_hat, free, stalled), alpha_shift)
        history.append((lbeta.copy(), bel.p.copy(), residual))
        if residual <= tol:
            break
    else:
        raise ConvergenceError("equilibrium iteration did not converge", residual=residual,
                               iterations=max_iter, log_beta=lbeta.tolist())
    strategy = Strategy(None, p_alpha, tie, log_beta=lbeta)
    w, kappa, info = welfare(strategy, mu, env)
    regular = bool(n < 2 or bel.p[n - 1] >= 1.0 - p_hat - 1e-9)
    return ESSResult(strategy, mu, bel, w, kappa, info, consensus_metric(mu), residual, it,
                     ev.count, regular, history)


def _solve_coordinate(ev, lbeta, p_alpha, tie, k, bel, mu, p_hat, damping, snap):
    """One-dimensional complementarity solve in ``log beta[k]``, others fixed."""
    n = lbeta.size - 1

    def with_coord(v):
        out = lbeta.copy()
        out[k] = v
        out[n - k] = v
        return out

    gap = _boundary_gap(bel.p[k], p_hat)
    cur = float(lbeta[k])
    toward_one = gap > 0
    if abs(gap) <= PIN_TOL or (toward_one and cur == 0.0) or (not toward_one and cur == -np.inf):
        return mu, bel, lbeta, False
    cache = {cur: (gap, mu, bel)}

    def eval_gap(v):
        if v not in cache:
            m, bl = ev(with_coord(v), p_alpha, tie)
            cache[v] = (_boundary_gap(bl.p[k], p_hat), m, bl)
        return cache[v][0]

    shrink = math.log1p(-damping)
    m = 0
    root = None
    stalled = False
    while root is None:
        step = shrink * 2.0 ** m
        m += 1
        if toward_one:
            # distance 1 - beta shrinks geometrically
            ldist = math.log(-math.expm1(cur)) + step
            new = 0.0 if ldist <= math.log(snap) else math.log1p(-math.exp(ldist))
        else:
            new = cur + step
            if new <= LOG_BETA_MIN:
                new = -np.inf
        g_new = eval_gap(new)
        if not toward_one and new < STALL_LOG_BETA and abs(g_new - gap) <= 1e-13:
            # beliefs no longer respond: the limit beta -> 0+ is reached
            root = new
            stalled = True
            break
        if abs(g_new) <= PIN_TOL or new in (0.0, -np.inf) and (g_new > 0) == (gap > 0):
            root = new
        elif (g_new > 0) != (gap > 0):
            root = _bracket_root(eval_gap, cur, new)
        else:
            cur, gap = new, g_new
    eval_gap(root)
    _, m_, bl = cache[root]
    return m_, bl, with_coord(root), stalled


def _bracket_root(f, a: float, b: float) -> float:
    """Root of ``f`` in ``log beta`` between ``a`` and ``b``."""
    lo, hi = min(a, b), max(a, b)
    if lo == -np.inf:
        # at the herding corner consensus is absorbing; search just above it
        lo = LOG_BETA_MIN
        if (f(lo) > 0) == (f(hi) > 0):
            return -np.inf
    return brentq(f, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=300)


def compare_with_simulation(strategy, env: Environment, measure: StateMeasure, T: int,
                            seed=None, bins: int = 50, burn_in: int | None = None) -> float:
    """Total-variation distance between ``measure`` and a long simulated run.

    Both are binned on ``bins`` equal cells of [0, 1] separately for each state.
    """
    if burn_in is None:
        burn_in = int(max(10_000, 20.0 / env.lam))
    rng = np.random.default_rng(seed)
    edges = np.linspace(0.0, 1.0, bins + 1)
    hist = np.zeros((2, bins))
    tr = simulate_chain(strategy, env, 0.5, int(rng.integers(2)), burn_in, seed=rng)
    theta, x = int(tr.theta[-1]), float(tr.x[-1])
    done = 0
    while done < T:
        m = min(2_000_000, T - done)
        tr = simulate_chain(strategy, env, x, theta, m, seed=rng)
        th, xs = tr.theta[1:], tr.x[1:]
        for t in (0, 1):
            hist[t] += np.histogram(xs[th == t], bins=edges)[0]
        theta, x = int(th[-1]), float(xs[-1])
        done += m
    hist /= hist.sum()
    idx = np.clip(np.searchsorted(edges, measure.grid.x, side="right") - 1, 0, bins - 1)
    ref = np.zeros((2, bins))
    for t in (0, 1):
        np.add.at(ref[t], idx, measure.weights[:, t])
    return 0.5 * float(np.abs(hist - ref).sum())
