"""Continuous-time limit of the three-action sample game.

Agents herd after unanimous samples and acquire with probability ``b`` after
mixed ones. In the limit of frequent, small replacement the prevalence follows
``x' = h_theta(x)`` between exponential state switches at rate ``lam``, with
``h_theta(x) = x(1-x)(a x + c_theta)``, ``a = 2 - 3b`` and
``c_theta = 3 b pi_theta - 1``.

The stationary densities solve ``(f_1 h_1)' = lam (f_0 - f_1)`` together with
its mirror image, so ``f_1 h_1 + f_0 h_0 = 0`` and

    f_1 = C exp(E) / h_1,   f_0 = -C exp(E) / h_0,
    E(x) = lam K log(x (1-x) / |l_0(x) l_1(x)|) + const,

where ``l_theta(x) = a x + c_theta`` and ``K = a / (c_0 c_1) > 0``. Both
densities behave like ``x^(lam K - 1)`` at the endpoints. In logit
coordinates ``y = log(x / (1-x))`` the integrands are smooth with exactly
exponential tails, which are integrated in closed form beyond ``|y| = Y``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.special import expit

from . import kernels
from .core import ConfigError, DomainError, Environment, simulate_chain

TAIL_Y = 36.0


@dataclass(frozen=True)
class PdmpConfig:
    """Switch rate ``lam`` per unit time, signal precision ``pi``, mixed-sample acquisition ``b``."""

    lam: float
    pi: float
    b: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ConfigError("lambda", "switch rate must be positive")
        if not 0.5 < self.pi < 1.0:
            raise ConfigError("pi", "precision must lie in (1/2, 1)")
        if not 0.0 < self.b <= 1.0:
            raise ConfigError("b", "acquisition probability must lie in (0, 1]")
        if self.c1 <= 0:
            raise ConfigError("b", "need b > 1/(3 pi) so that h_1 > 0 near 0")
        if self.kappa1 <= 0:
            raise ConfigError("b", "need b < 1/(3 (1-pi)) so that the third root of h_1 "
                                   "lies outside (0, 1)")
        if self.pi > 2.0 / 3.0:
            warnings.warn("pi > 2/3 lies outside the regime of the above-threshold "
                          "equilibrium", stacklevel=2)

    @property
    def a(self) -> float:
        return 2.0 - 3.0 * self.b

    @property
    def c1(self) -> float:
        return 3.0 * self.b * self.pi - 1.0

    @property
    def c0(self) -> float:
        return 3.0 * self.b * (1.0 - self.pi) - 1.0

    @property
    def kappa1(self) -> float:
        # l_1(1) = 1 - 3 b (1-pi); equals -c0
        return self.a + self.c1

    @property
    def K(self) -> float:
        """Endpoint exponent: densities behave like ``x^(lam K - 1)``."""
        return self.a / (self.c0 * self.c1)

    @property
    def endpoint_exponent(self) -> float:
        return self.lam * self.K

    def c(self, theta: int) -> float:
        return self.c1 if theta == 1 else self.c0

    def replace(self, **changes) -> "PdmpConfig":
        d = {"lam": self.lam, "pi": self.pi, "b": self.b}
        d.update(changes)
        return PdmpConfig(**d)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "pi": self.pi, "b": self.b}


def b_range(pi: float) -> tuple[float, float]:
    """Open interval of ``b`` with normalizable densities and ``h_0 < 0 < h_1``."""
    return 2.0 / 3.0, min(1.0, 1.0 / (3.0 * (1.0 - pi)))


def h_theta(config: PdmpConfig, theta: int, x):
    """Drift ``x(1-x)(x(2-3b) + 3 b pi_theta - 1)``."""
    x = np.asarray(x, dtype=float)
    return x * (1.0 - x) * (config.a * x + config.c(theta))


def flow_time(config: PdmpConfig, theta: int, x0: float, x1: float) -> float:
    """Time the flow of ``h_theta`` takes from ``x0`` to ``x1`` (closed form)."""
    a, c = config.a, config.c(theta)
    kap = a + c

    def T(y):
        # antiderivative of dy / (a sigmoid(y) + c)
        if a == 0.0:
            return y / c
        return y / c - a / (c * kap) * math.log(abs(kap * math.exp(y) + c))

    y0, y1 = _logit(x0), _logit(x1)
    return T(y1) - T(y0)


def _logit(x: float) -> float:
    return math.log(x) - math.log1p(-x)


# ---------------------------------------------------------------------------
# closed-form density
# ---------------------------------------------------------------------------


def _log_parts(cfg: PdmpConfig, y):
    """``log x``, ``log(1-x)`` and ``log |l_0 l_1|`` at logit coordinate ``y``."""
    y = np.asarray(y, dtype=float)
    lx = -np.logaddexp(0.0, -y)
    l1x = -np.logaddexp(0.0, y)
    x = expit(y)
    ll = np.log(np.abs(cfg.a * x + cfg.c1)) + np.log(np.abs(cfg.a * x + cfg.c0))
    return lx, l1x, ll, x


def _exponent_at_half(cfg: PdmpConfig) -> float:
    ll = math.log(abs(0.5 * cfg.a + cfg.c1)) + math.log(abs(0.5 * cfg.a + cfg.c0))
    return 2.0 * math.log(0.5) - ll


def log_exponent(cfg: PdmpConfig, y):
    """``E = -lam * int_{1/2}^x (1/h_0 + 1/h_1) dt`` at logit coordinate ``y``."""
    lx, l1x, ll, _ = _log_parts(cfg, y)
    return cfg.lam * cfg.K * (lx + l1x - ll - _exponent_at_half(cfg))


def _log_integrand(cfg: PdmpConfig, theta: int, i: int, j: int, y):
    # log of x^i (1-x)^j f_theta(x) dx/dy with unit constant
    lx, l1x, ll, x = _log_parts(cfg, y)
    E = cfg.lam * cfg.K * (lx + l1x - ll - _exponent_at_half(cfg))
    lt = np.log(np.abs(cfg.a * x + cfg.c(theta)))
    return i * lx + j * l1x + E - lt


def log_moment(cfg: PdmpConfig, theta: int, i: int, j: int, Y: float = TAIL_Y) -> float:
    """``log int x^i (1-x)^j f_theta dx`` for the unnormalized density (``C = 1``).

    Infinite when the integral diverges (``b = 2/3`` with a non-vanishing
    endpoint weight).
    """
    lo_rate = cfg.lam * cfg.K + i
    hi_rate = cfg.lam * cfg.K + j
    if lo_rate <= 0 or hi_rate <= 0:
        return math.inf
    ys = np.linspace(-Y, Y, 241)
    vals = _log_integrand(cfg, theta, i, j, ys)
    shift = float(vals.max())
    peak = float(ys[np.argmax(vals)])

    def f(y):
        return math.exp(float(_log_integrand(cfg, theta, i, j, y)) - shift)

    pts = sorted({-Y, peak, Y})
    body = 0.0
    for lo, hi in zip(pts, pts[1:]):
        if hi > lo:
            body += quad(f, lo, hi, epsabs=0.0, epsrel=1e-13, limit=400)[0]
    # beyond |y| = Y the integrand is exponential up to O(e^-Y)
    tail_lo = math.exp(vals[0] - shift) / lo_rate
    tail_hi = math.exp(vals[-1] - shift) / hi_rate
    return shift + math.log(body + tail_lo + tail_hi)


@dataclass(frozen=True, eq=False)
class PdmpDensity:
    """Stationary densities of ``x`` conditional on each state, on a logit grid."""

    config: PdmpConfig
    y: np.ndarray
    x: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    log_f0: np.ndarray = field(repr=False)
    log_f1: np.ndarray = field(repr=False)
    norm_constant: float  # C in f_1 = C exp(E) / h_1
    log_norm: float  # log(1 / C)

    def moment(self, theta: int, i: int, j: int) -> float:
        """``int x^i (1-x)^j f_theta dx``."""
        return math.exp(log_moment(self.config, theta, i, j) - self.log_norm)

    def mass(self, theta: int) -> float:
        return self.moment(theta, 0, 0)

    def evaluate(self, theta: int, x):
        """``f_theta`` at arbitrary points of (0, 1), without grid interpolation."""
        x = np.asarray(x, dtype=float)
        y = np.log(x) - np.log1p(-x)
        lx, l1x, _, _ = _log_parts(self.config, y)
        lf = _log_integrand(self.config, theta, 0, 0, y) - lx - l1x - self.log_norm
        return np.exp(lf)

    def bin_masses(self, theta: int, edges) -> np.ndarray:
        """Probability of each cell ``[edges[i], edges[i+1])`` under ``f_theta``."""
        edges = np.asarray(edges, dtype=float)
        cfg = self.config
        lo_rate = hi_rate = cfg.lam * cfg.K

        def f(y):
            return math.exp(float(_log_integrand(cfg, theta, 0, 0, y)) - self.log_norm)

        out = np.empty(edges.size - 1)
        for k in range(edges.size - 1):
            a, b = edges[k], edges[k + 1]
            ya = -TAIL_Y if a <= expit(-TAIL_Y) else max(_logit(a), -TAIL_Y)
            yb = TAIL_Y if b >= expit(TAIL_Y) else min(_logit(b), TAIL_Y)
            m = quad(f, ya, yb, epsabs=0.0, epsrel=1e-11, limit=400)[0] if yb > ya else 0.0
            if ya == -TAIL_Y:
                m += f(-TAIL_Y) / lo_rate
            if yb == TAIL_Y:
                m += f(TAIL_Y) / hi_rate
            out[k] = m
        return out


def invariant_density(config: PdmpConfig, grid_size: int = 8192,
                      min_offset: float = 1e-10) -> PdmpDensity:
    """Closed-form stationary densities, normalized so each integrates to one."""
    if config.b <= 2.0 / 3.0:
        raise DomainError("densities are normalizable only for b > 2/3 "
                          "(the endpoint exponent lam K must be positive)")
    Y = _logit(1.0 - min_offset)
    y = np.linspace(-Y, Y, grid_size)
    log_norm = log_moment(config, 1, 0, 0)
    lf = []
    for theta in (0, 1):
        lx, l1x, _, _ = _log_parts(config, y)
        # f dx = (integrand) dy and dx/dy = x(1-x)
        lf.append(_log_integrand(config, theta, 0, 0, y) - lx - l1x - log_norm)
    x = expit(y)
    return PdmpDensity(config, y, x, np.exp(lf[0]), np.exp(lf[1]), lf[0], lf[1],
                       math.exp(-log_norm), log_norm)


def density_ratio(config: PdmpConfig, x):
    """``f_1 / f_0 = -h_0 / h_1`` written out in the model parameters."""
    x = np.asarray(x, dtype=float)
    b, pi = config.b, config.pi
    return (1.0 - 3.0 * b * (1.0 - pi) + x * (3.0 * b - 2.0)) / (3.0 * b * pi - 1.0
                                                                 - x * (3.0 * b - 2.0))


def mass_ode_residual(density: PdmpDensity, interior: float = 0.99) -> float:
    """Largest relative residual of both mass equations on the grid interior.

    Derivatives use fourth-order centered differences in the logit
    coordinate; the residual is scaled by ``lam (f_0 + f_1)``.
    """
    cfg = density.config
    y = density.y
    hy = y[1] - y[0]
    lam = cfg.lam
    lx, l1x, _, x = _log_parts(cfg, y)
    # x(1-x) from the logit coordinate; 1 - x loses digits near 1
    lxx = lx + l1x
    worst = 0.0
    for theta, lf, f, g in ((1, density.log_f1, density.f1, density.f0),
                            (0, density.log_f0, density.f0, density.f1)):
        lt = cfg.a * x + cfg.c(theta)
        u = np.sign(lt) * np.exp(lf + lxx + np.log(np.abs(lt)))
        du = (-u[4:] + 8 * u[3:-1] - 8 * u[1:-3] + u[:-4]) / (12 * hy)
        lhs = du / np.exp(lxx[2:-2])
        rhs = lam * (g[2:-2] - f[2:-2])
        scale = lam * (g[2:-2] + f[2:-2])
        n = lhs.size
        cut = int(round(n * (1 - interior) / 2))
        sl = slice(cut, n - cut)
        ok = scale[sl] > 1e-290  # skip where the densities underflow
        if ok.any():
            worst = max(worst, float(np.max(np.abs(lhs - rhs)[sl][ok] / scale[sl][ok])))
    return worst


# ---------------------------------------------------------------------------
# likelihood ratios and the equilibrium b*
# ---------------------------------------------------------------------------


def lr_k(config: PdmpConfig, k: int) -> float:
    """Stationary likelihood ratio of state 1 after a sample with ``k`` ones of three."""
    if k not in (0, 1, 2, 3):
        raise ConfigError("k", "sample count must lie in {0, 1, 2, 3}")
    l1 = log_moment(config, 1, k, 3 - k)
    l0 = log_moment(config, 0, k, 3 - k)
    if not (math.isfinite(l1) and math.isfinite(l0)):
        raise DomainError(f"LR_{k} is undefined at b = 2/3")
    return math.exp(l1 - l0)


def mixture_lr(config: PdmpConfig, k: int, atom_mass: float) -> float:
    """``LR_k`` when a fraction ``atom_mass`` of each state's measure sits at the matching consensus.

    State 1 puts the extra mass at ``x = 1`` and state 0 at ``x = 0``; only
    unanimous samples see the atoms.
    """
    if not 0.0 <= atom_mass < 1.0:
        raise ConfigError("atom_mass", "must lie in [0, 1)")
    d = invariant_density(config, grid_size=16)
    m1 = (1.0 - atom_mass) * d.moment(1, k, 3 - k) + atom_mass * (k == 3)
    m0 = (1.0 - atom_mass) * d.moment(0, k, 3 - k) + atom_mass * (k == 0)
    return m1 / m0


@dataclass(frozen=True, eq=False)
class BStarResult:
    b: float
    density: PdmpDensity
    lr: np.ndarray
    beliefs: np.ndarray
    welfare: float
    p_hat: float
    bracket: tuple[float, float]
    lr2_max: float
    ordering_holds: bool


def pdmp_welfare(density: PdmpDensity, cost: float) -> tuple[float, float, float]:
    """Stationary payoff ``(w, match, info_rate)`` when both states are equally likely.

    An agent playing against state 1 matches with probability
    ``chi_1(x) = x + h_1(x)``; against state 0 with ``1 - x - h_0(x)``.
    Acquisition happens after mixed samples, with probability ``3 x (1-x) b``.
    """
    cfg = density.config
    a = cfg.a
    M = density.moment
    # h_theta = a x^2 (1-x) + c_theta x (1-x)
    m1 = M(1, 1, 0) + a * M(1, 2, 1) + cfg.c1 * M(1, 1, 1)
    m0 = 1.0 - M(0, 1, 0) - a * M(0, 2, 1) - cfg.c0 * M(0, 1, 1)
    match = 0.5 * (m1 + m0)
    info = 0.5 * cfg.b * 3.0 * (M(1, 1, 1) + M(0, 1, 1))
    return match - cost * info, match, info


def find_b_star(lam: float, pi: float, cost: float, tol: float = 1e-12,
                edge: float = 1e-9) -> BStarResult:
    """Mixed-sample acquisition ``b*`` making agents indifferent after two ones of three.

    Solves ``LR_2(b) = p_hat / (1 - p_hat)`` by bisection on
    ``(2/3, min(1, 1/(3(1-pi))))`` and then checks that herding at unanimous
    samples and acquisition at mixed ones are optimal.
    """
    env = Environment.binary(min(lam, 0.49), pi, cost, 3)
    p_hat = env.p_hat
    if not 0.5 < p_hat < 1.0:
        raise DomainError("need 1/2 < p_hat < 1")
    target = p_hat / (1.0 - p_hat)
    lo, hi = b_range(pi)
    hi = hi - edge * (hi - lo)

    def lr2(b):
        return lr_k(PdmpConfig(lam, pi, b), 2)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lr_hi = lr2(hi)
        if lr_hi <= target:
            raise DomainError(f"lambda too large for the above-threshold regime: LR_2 reaches "
                              f"at most {lr_hi:.6g} < p_hat/(1-p_hat) = {target:.6g}")
        a, c = lo, hi
        while c - a > tol:
            m = 0.5 * (a + c)
            if lr2(m) < target:
                a = m
            else:
                c = m
        b = 0.5 * (a + c)
        cfg = PdmpConfig(lam, pi, b)
    dens = invariant_density(cfg)
    lr = np.array([lr_k(cfg, k) for k in range(4)])
    beliefs = lr / (1.0 + lr)
    w, _, _ = pdmp_welfare(dens, cost)
    ok = bool(beliefs[0] < 1.0 - p_hat < beliefs[2] + 1e-9 and beliefs[3] > p_hat
              and abs(beliefs[1] - (1.0 - p_hat)) < 1e-8)
    return BStarResult(b, dens, lr, beliefs, w, p_hat, (a, c), lr_hi, ok)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


def simulate_pdmp(config: PdmpConfig, horizon: float, dt: float, seed=None,
                  burn_in: float | None = None, x0: float = 0.5,
                  rtol: float = 1e-9, atol: float = 1e-12):
    """Sample ``(x, theta)`` every ``dt`` along an event-driven run of length ``horizon``.

    Switch times are exponential with rate ``lam``; between switches the
    flow is integrated adaptively in logit coordinates, so ``x`` stays inside
    (0, 1) and moves monotonically.
    """
    rng = np.random.default_rng(seed)
    if burn_in is None:
        burn_in = 20.0 / config.lam
    n_burn = int(math.ceil(burn_in / dt))
    n = int(horizon / dt)
    total = (n_burn + n) * dt
    n_waits = int(config.lam * total + 10 * math.sqrt(config.lam * total + 1) + 10)
    waits = rng.exponential(1.0 / config.lam, size=n_waits)
    theta0 = int(rng.integers(2))
    ys, th, _ = kernels.pdmp_sample(config.a, config.c0, config.c1, _logit(x0), theta0, waits,
                                    dt, n_burn + n, rtol, atol)
    ys, th = ys[n_burn:], th[n_burn:]
    return expit(ys), th.astype(np.int8)


def histogram_l1(density: PdmpDensity, x, theta, bins: int = 20) -> float:
    """L1 distance between the joint ``(theta, x)`` histogram and the analytic one."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    out = 0.0
    n = x.size
    for t in (0, 1):
        emp = np.histogram(x[theta == t], bins=edges)[0] / n
        ana = 0.5 * density.bin_masses(t, edges)
        out += float(np.abs(emp - ana).sum())
    return out


@dataclass(frozen=True)
class DiscretizationReport:
    eps: tuple
    tv: tuple
    periods: tuple
    decreasing: bool
    state_gap: tuple  # TV between the two state-conditional histograms
    mirror_gap: tuple  # TV between f_1 and the mirror image of f_0


def _herding_phi(config: PdmpConfig) -> np.ndarray:
    b, pi = config.b, config.pi
    return np.array([[0.0, b * (1 - pi), b * (1 - pi) + 1 - b, 1.0],
                     [0.0, b * pi, b * pi + 1 - b, 1.0]])


def discretization_check(config: PdmpConfig, eps_list=(0.2, 0.1, 0.05),
                         sim_budget: float = 2e5, seed=None, bins: int = 20) -> DiscretizationReport:
    """Distance between the discrete game with period ``eps`` and the continuous limit.

    The game with switch probability ``lam eps`` and replacement rate ``eps``
    is simulated for ``sim_budget`` units of continuous time. All ``eps``
    share one realization of the continuous switch times: a switch at time
    ``s`` occurs in period ``floor(s / a) + 1`` with ``a = -log(1 - lam eps) / lam``,
    which gives exactly geometric gaps with parameter ``lam eps``.
    """
    rng = np.random.default_rng(seed)
    lam = config.lam
    burn = 20.0 / lam
    total = burn + sim_budget
    n_waits = int(lam * total + 10 * math.sqrt(lam * total + 1) + 10)
    waits = rng.exponential(1.0 / lam, size=n_waits)
    theta0 = int(rng.integers(2))
    phi = _herding_phi(config)
    pdens = invariant_density(config, grid_size=16) if config.b > 2.0 / 3.0 else None
    edges = np.linspace(0.0, 1.0, bins + 1)
    ana = None if pdens is None else [0.5 * pdens.bin_masses(t, edges) for t in (0, 1)]
    tvs, periods, gap, mirror = [], [], [], []
    for eps in eps_list:
        if not 0 < lam * eps < 0.5:
            raise ConfigError("eps", "need 0 < lam * eps < 1/2")
        a1 = -math.log1p(-lam * eps) / lam
        gaps = np.floor(waits / a1).astype(np.int64) + 1
        switch_at = np.cumsum(gaps)
        T = int(total / eps)
        flips = np.zeros(T, dtype=np.uint8)
        switch_at = switch_at[switch_at <= T]
        flips[switch_at - 1] = 1
        env = Environment.binary(lam * eps, config.pi, 0.0, 3, rho=eps)
        tr = simulate_chain(phi, env, 0.5, theta0, T, flips=flips)
        nb = int(burn / eps)
        xs, th = tr.x[nb + 1:], tr.theta[nb + 1:]
        emp = [np.histogram(xs[th == t], bins=edges)[0] / xs.size for t in (0, 1)]
        cond = [e / max(e.sum(), 1e-300) for e in emp]
        gap.append(0.5 * float(np.abs(cond[1] - cond[0]).sum()))
        mirror.append(0.5 * float(np.abs(cond[1] - cond[0][::-1]).sum()))
        if ana is not None:
            tvs.append(0.5 * float(sum(np.abs(emp[t] - ana[t]).sum() for t in (0, 1))))
        periods.append(T)
    dec = bool(tvs) and all(b < a for a, b in zip(tvs, tvs[1:]))
    return DiscretizationReport(tuple(eps_list), tuple(tvs), tuple(periods), dec, tuple(gap),
                                tuple(mirror))
