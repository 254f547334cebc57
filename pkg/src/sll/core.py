"""Primitives of the stationary sampling-and-learning model.

A state ``theta`` in {0, 1} switches with probability ``lam`` each period. A
fraction ``rho`` of agents is replaced every period; each newcomer samples the
actions of ``n`` incumbents, optionally buys a private signal at cost ``cost``
and then picks an action. ``x`` is the fraction of the population playing 1.

Signals are described by the unconditional distribution ``H`` of the
posterior ``q = P(theta = 1 | signal)`` under a uniform prior. The induced
conditional laws are ``dH_1(q) = 2q dH(q)`` and ``dH_0(q) = 2(1-q) dH(q)``.
Cdfs are evaluated with the mid-value convention ``P(Q<q) + P(Q=q)/2`` so that
indifferent agents split evenly at atoms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import kernels

ATOL = 1e-12


class ConfigError(ValueError):
    """Invalid model parameters. Carries the offending field name."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DomainError(ValueError):
    """A quantity is undefined at the requested arguments."""


class ConvergenceError(RuntimeError):
    """A numerical procedure failed to reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), **diagnostics):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# signals
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SignalModel:
    """Symmetric distribution of the posterior signal.

    Parameters
    ----------
    atoms : array
        Sorted posterior values ``q`` in [0, 1].
    masses : array
        Unconditional masses of the atoms (sum to one).
    kind : str
        ``"binary"`` or ``"tabulated"``.
    precision : float, optional
        ``P(signal = theta)`` for binary signals.
    """

    atoms: np.ndarray
    masses: np.ndarray
    kind: str = "tabulated"
    precision: float | None = None

    @classmethod
    def binary(cls, pi: float) -> "SignalModel":
        pi = float(pi)
        if not (0.5 < pi <= 1.0):
            raise ConfigError("signal.precision", f"binary precision must lie in (1/2, 1], got {pi}")
        if pi == 1.0:
            atoms = np.array([0.0, 1.0])
        else:
            atoms = np.array([1.0 - pi, pi])
        return cls(atoms, np.array([0.5, 0.5]), "binary", pi)

    @classmethod
    def tabulated(cls, pairs: Iterable[tuple[float, float]]) -> "SignalModel":
        pairs = sorted((float(q), float(m)) for q, m in pairs)
        atoms = np.array([q for q, _ in pairs])
        masses = np.array([m for _, m in pairs])
        if atoms.size == 0:
            raise ConfigError("signal.atoms", "no atoms given")
        if np.any(atoms < 0) or np.any(atoms > 1):
            raise ConfigError("signal.atoms", "posterior atoms must lie in [0, 1]")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
            raise ConfigError("signal.atoms", "masses must be non-negative and sum to 1")
        if not (np.allclose(atoms, 1.0 - atoms[::-1], atol=1e-9)
                and np.allclose(masses, masses[::-1], atol=1e-9)):
            raise ConfigError("signal.atoms", "distribution must be symmetric under q -> 1-q")
        keep = masses > 0
        atoms, masses = atoms[keep], masses[keep] / masses[keep].sum()
        if np.all(np.abs(atoms - 0.5) < ATOL):
            raise ConfigError("signal.atoms", "signal is uninformative")
        return cls(atoms, masses, "tabulated", None)

    def conditional_masses(self, theta: int) -> np.ndarray:
        """Masses of the atoms under ``H_theta``."""
        q = self.atoms
        return 2.0 * self.masses * (q if theta == 1 else 1.0 - q)

    def cdf(self, theta: int, q):
        """Mid-value cdf ``H_theta(q)``."""
        q = np.asarray(q, dtype=float)
        m = self.conditional_masses(theta)
        at = np.abs(self.atoms[None, :] - q[..., None]) <= ATOL
        below = (self.atoms[None, :] < q[..., None]) & ~at
        out = (below * m).sum(-1) + 0.5 * (at * m).sum(-1)
        return out if out.ndim else float(out)

    @property
    def q_max(self) -> float:
        return float(self.atoms[-1])

    def to_dict(self) -> dict:
        if self.kind == "binary":
            return {"kind": "binary", "precision": self.precision}
        return {"kind": "tabulated",
                "atoms": [[float(q), float(m)] for q, m in zip(self.atoms, self.masses)]}

    @classmethod
    def from_dict(cls, d: dict) -> "SignalModel":
        if d.get("kind") == "binary":
            return cls.binary(d["precision"])
        return cls.tabulated(d["atoms"])


def value_informed(signals: SignalModel, p):
    """``v(p)``: expected payoff of an informed agent with prior ``p``."""
    p = np.asarray(p, dtype=float)
    q, m = signals.atoms, signals.masses
    pp = p[..., None]
    out = 2.0 * (m * np.maximum(pp * q, (1.0 - pp) * (1.0 - q))).sum(-1)
    return out if out.ndim else float(out)


def value_uninformed(p):
    """``u(p) = max(p, 1-p)``."""
    p = np.asarray(p, dtype=float)
    out = np.maximum(p, 1.0 - p)
    return out if out.ndim else float(out)


def posterior(p: float, q: float) -> float:
    """Combine prior ``p`` with signal posterior ``q``."""
    num = p * q
    den = num + (1.0 - p) * (1.0 - q)
    if den <= 0.0 or (p in (0.0, 1.0) and q == 1.0 - p):
        raise DomainError(f"posterior undefined for p={p}, q={q}")
    return num / den


def cutoff_belief(signals: SignalModel, cost: float, tol: float = 1e-12,
                  max_iter: int = 200) -> float:
    """``p_hat``: acquisition is strictly optimal exactly for beliefs in (1-p_hat, p_hat).

    ``v - cost - u`` is convex on [1/2, 1], positive at 1/2 and non-positive at
    1, so its positive set is an interval [1/2, p_hat) found by bisection.
    """
    def gap(p):
        return value_informed(signals, p) - cost - p

    if gap(0.5) <= 0.0:
        raise ConfigError("cost", "acquisition is not strictly optimal at belief 1/2")
    if cost == 0.0 and signals.q_max >= 1.0:
        return 1.0
    lo, hi = 0.5, 1.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if gap(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# environment and strategies
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Environment:
    """Model parameters.

    Parameters
    ----------
    lam : float
        State switching probability per period, in (0, 1/2).
    rho : float
        Replacement rate, in (0, 1].
    cost : float
        Signal cost, non-negative.
    n : int
        Sample size, at least 1.
    signals : SignalModel
    """

    lam: float
    rho: float
    cost: float
    n: int
    signals: SignalModel
    p_hat: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.lam < 0.5):
            raise ConfigError("lambda", f"must lie in (0, 1/2), got {self.lam}")
        if not (0.0 < self.rho <= 1.0):
            raise ConfigError("rho", f"must lie in (0, 1], got {self.rho}")
        if not (self.cost >= 0.0):
            raise ConfigError("cost", f"must be non-negative, got {self.cost}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError("n", f"must be a positive integer, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "p_hat", cutoff_belief(self.signals, self.cost))

    @classmethod
    def binary(cls, lam: float, pi: float, cost: float, n: int, rho: float = 1.0):
        return cls(lam, rho, cost, n, SignalModel.binary(pi))

    def replace(self, **changes) -> "Environment":
        d = dict(lam=self.lam, rho=self.rho, cost=self.cost, n=self.n, signals=self.signals)
        d.update(changes)
        return Environment(**d)

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "rho": self.rho, "cost": self.cost, "n": self.n,
                "signal": self.signals.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Environment":
        return cls(float(d["lambda"]), float(d.get("rho", 1.0)), float(d["cost"]),
                   int(d["n"]), SignalModel.from_dict(d["signal"]))


def effective_lambda(lam: float, rho: float) -> float:
    """Switching rate per replacement: ``lam / (1 - (1-rho)(1-2 lam))``."""
    return lam / (1.0 - (1.0 - rho) * (1.0 - 2.0 * lam))


@dataclass(frozen=True, eq=False)
class Strategy:
    """Symmetric strategy indexed by the number ``k`` of 1s in the sample.

    ``beta[k]`` is the acquisition probability. ``beliefs[k]`` is the belief
    that the state is 1 used for decisions. ``tie[k]`` is the probability of
    playing 1 when exactly indifferent, both for an informed agent with
    ``q = 1 - beliefs[k]`` and for an uninformed agent with ``beliefs[k] = 1/2``.

    Acquisition near unanimous samples can be far below the smallest double;
    pass ``log_beta`` to keep it exactly (``beta`` is then derived from it).
    """

    beta: np.ndarray
    beliefs: np.ndarray
    tie: np.ndarray = None
    log_beta: np.ndarray = None

    def __post_init__(self):
        if self.log_beta is not None:
            log_beta = np.minimum(np.asarray(self.log_beta, dtype=float), 0.0)
            beta = np.exp(log_beta)
        else:
            beta = np.asarray(self.beta, dtype=float)
            with np.errstate(divide="ignore"):
                log_beta = np.log(beta)
        beliefs = np.asarray(self.beliefs, dtype=float)
        tie = np.full(beta.shape, 0.5) if self.tie is None else np.asarray(self.tie, dtype=float)
        if beta.ndim != 1 or beliefs.shape != beta.shape or tie.shape != beta.shape:
            raise ConfigError("strategy", "beta, beliefs and tie must be vectors of length n+1")
        if np.any((beta < 0) | (beta > 1)) or np.any((tie < 0) | (tie > 1)):
            raise ConfigError("strategy.beta", "probabilities must lie in [0, 1]")
        if not (np.allclose(beta, beta[::-1], atol=1e-12)
                and np.array_equal(np.isfinite(log_beta), np.isfinite(log_beta[::-1]))
                and np.allclose(np.where(np.isfinite(log_beta), log_beta, 0.0),
                                np.where(np.isfinite(log_beta), log_beta, 0.0)[::-1],
                                rtol=1e-12, atol=1e-12)
                and np.allclose(beliefs, 1.0 - beliefs[::-1], atol=1e-12)
                and np.allclose(tie, 1.0 - tie[::-1], atol=1e-12)):
            raise ConfigError("strategy", "strategy is not symmetric under k -> n-k")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "log_beta", log_beta)
        object.__setattr__(self, "beliefs", beliefs)
        object.__setattr__(self, "tie", tie)

    @property
    def n(self) -> int:
        return self.beta.size - 1

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(),
                "log_beta": [float(v) if np.isfinite(v) else None for v in self.log_beta],
                "beliefs": self.beliefs.tolist(), "tie": self.tie.tolist()}


def _play1_informed(signals: SignalModel, theta: int, p: float, tie: float,
                    complement: bool = False) -> float:
    """Probability an informed agent plays 1 (or 0 when ``complement``)."""
    m = signals.conditional_masses(theta)
    thr = 1.0 - p
    above = signals.atoms > thr + ATOL
    at = np.abs(signals.atoms - thr) <= ATOL
    below = ~(above | at)
    if complement:
        return float(m[below].sum() + (1.0 - tie) * m[at].sum())
    return float(m[above].sum() + tie * m[at].sum())


def _play1_uninformed(p: float, tie: float) -> float:
    if abs(p - 0.5) <= ATOL:
        return tie
    return 1.0 if p > 0.5 else 0.0


def phi_table(strategy: Strategy, env: Environment) -> np.ndarray:
    """Probabilities ``phi[theta, k]`` that a newcomer seeing ``k`` ones plays 1."""
    if strategy.n != env.n:
        raise ConfigError("strategy", f"length {strategy.n + 1} does not match n={env.n}")
    out = np.empty((2, env.n + 1))
    for k in range(env.n + 1):
        b, p, t = strategy.beta[k], strategy.beliefs[k], strategy.tie[k]
        un = _play1_uninformed(p, t)
        for theta in (0, 1):
            out[theta, k] = b * _play1_informed(env.signals, theta, p, t) + (1.0 - b) * un
    return out


def phi(strategy: Strategy, env: Environment, theta: int, k: int) -> float:
    """Probability that a newcomer seeing ``k`` ones plays 1 in state ``theta``."""
    return float(phi_table(strategy, env)[theta, k])


def log_phi_tables(strategy: Strategy, env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """``log phi[theta, k]`` and ``log(1 - phi[theta, k])`` without cancellation.

    Exact even when acquisition is far below the double range, which is
    where near-unanimous samples end up in equilibrium.
    """
    n = env.n
    lphi = np.empty((2, n + 1))
    lcphi = np.empty((2, n + 1))
    with np.errstate(divide="ignore"):
        for k in range(n + 1):
            lb = strategy.log_beta[k]
            b = strategy.beta[k]
            p, t = strategy.beliefs[k], strategy.tie[k]
            un = _play1_uninformed(p, t)
            for theta in (0, 1):
                inf1 = _play1_informed(env.signals, theta, p, t)
                inf0 = _play1_informed(env.signals, theta, p, t, complement=True)
                if un == 0.0:
                    lphi[theta, k] = lb + math.log(inf1) if inf1 > 0 else -np.inf
                    lcphi[theta, k] = math.log1p(-b * inf1) if b * inf1 < 1 else -np.inf
                elif un == 1.0:
                    lcphi[theta, k] = lb + math.log(inf0) if inf0 > 0 else -np.inf
                    lphi[theta, k] = math.log1p(-b * inf0) if b * inf0 < 1 else -np.inf
                else:
                    v1 = b * inf1 + (1.0 - b) * un
                    v0 = b * inf0 + (1.0 - b) * (1.0 - un)
                    lphi[theta, k] = math.log(v1) if v1 > 0 else -np.inf
                    lcphi[theta, k] = math.log(v0) if v0 > 0 else -np.inf
    return lphi, lcphi


def binomial_weights(n: int, x) -> np.ndarray:
    """``C(n,k) x^k (1-x)^(n-k)`` for every ``k``; log-space above n=30."""
    return kernels.bernstein(n, x)


def g_from_phi(phi_row: np.ndarray, rho: float, x):
    """Next-period fraction of 1-players given the response ``phi_row``."""
    x = np.asarray(x, dtype=float)
    n = phi_row.shape[0] - 1
    out = (1.0 - rho) * x + rho * (binomial_weights(n, x) @ phi_row)
    return out if out.ndim else float(out)


def g(strategy: Strategy, env: Environment, theta: int, x):
    """``g_theta(x)``: next-period fraction of 1-players."""
    return g_from_phi(phi_table(strategy, env)[theta], env.rho, x)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Simulated path; index 0 holds the initial condition."""

    theta: np.ndarray
    x: np.ndarray


def _as_phi(strategy_or_phi, env: Environment) -> np.ndarray:
    if isinstance(strategy_or_phi, Strategy):
        return phi_table(strategy_or_phi, env)
    ph = np.ascontiguousarray(strategy_or_phi, dtype=float)
    if ph.shape != (2, env.n + 1):
        raise ConfigError("phi", f"expected shape (2, {env.n + 1}), got {ph.shape}")
    return ph


def draw_flips(rng: np.random.Generator, lam: float, size) -> np.ndarray:
    """Bernoulli(``lam``) state-switch indicators."""
    return (rng.random(size) < lam).astype(np.uint8)


def simulate_chain(strategy, env: Environment, x0: float, theta0: int, T: int,
                   seed=None, flips: np.ndarray | None = None) -> Trajectory:
    """Simulate ``T`` periods: the state switches first, then ``x <- g_theta(x)``.

    ``strategy`` may also be a ``(2, n+1)`` response table. ``flips`` fixes the
    switch indicators instead of drawing them.
    """
    if not (0.0 <= x0 <= 1.0):
        raise ConfigError("x0", "must lie in [0, 1]")
    if theta0 not in (0, 1):
        raise ConfigError("theta0", "must be 0 or 1")
    ph = _as_phi(strategy, env)
    if flips is None:
        flips = draw_flips(np.random.default_rng(seed), env.lam, int(T))
    elif len(flips) != T:
        raise ConfigError("flips", f"need {T} switch indicators")
    flips = np.ascontiguousarray(flips, dtype=np.uint8)
    th, xs = kernels.chain_trajectory(ph, float(env.rho), kernels.log_binomials(env.n),
                                      float(x0), int(theta0), flips)
    return Trajectory(th, xs)


@dataclass
class ChainSummary:
    """Per-batch accumulators of a long run.

    ``counts[b, theta, k]`` sums the probability of drawing ``k`` ones from the
    previous pool in periods with current state ``theta``. ``match`` sums the
    fraction of newcomers matching the state, ``info`` the acquisition rate and
    ``mismatch`` the distance ``|theta_t - x_t|``.
    """

    counts: np.ndarray
    match: np.ndarray
    info: np.ndarray
    mismatch: np.ndarray
    length: np.ndarray

    @property
    def periods(self) -> int:
        return int(self.length.sum())

    def beliefs(self) -> np.ndarray:
        """Stationary ``P(theta_t = 1 | k)`` estimated from the run."""
        c = self.counts.sum(0)
        tot = c.sum(0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, c[1] / tot, 0.5)

    def belief_se(self, k: int) -> float:
        """Batch-means standard error of ``beliefs()[k]`` (delta method)."""
        num = self.counts[:, 1, k]
        den = self.counts[:, :, k].sum(1)
        return ratio_se(num, den)

    def mean(self, name: str) -> float:
        return float(getattr(self, name).sum() / self.length.sum())

    def mean_se(self, name: str) -> float:
        return ratio_se(getattr(self, name), self.length)


def ratio_se(num: np.ndarray, den: np.ndarray) -> float:
    """Standard error of ``sum(num)/sum(den)`` from batch totals."""
    nb = num.size
    if nb < 2 or den.sum() <= 0:
        return float("nan")
    r = num.sum() / den.sum()
    resid = num - r * den
    dbar = den.mean()
    return float(math.sqrt(resid.var(ddof=1) / nb) / dbar)


def run_chain_summary(phi_tab: np.ndarray, beta: np.ndarray, env: Environment, T: int,
                      burn_in: int, seed=None, x0: float = 0.5, theta0: int | None = None,
                      n_batches: int = 100, chunk: int = 2_000_000,
                      flips: np.ndarray | None = None) -> ChainSummary:
    """Run ``burn_in + T`` periods and accumulate batch statistics over the last ``T``.

    Passing ``flips`` (length ``burn_in + T``) reuses a fixed switching path,
    which gives common random numbers across calls.
    """
    rng = np.random.default_rng(seed)
    if theta0 is None:
        theta0 = int(rng.integers(2))
    logc = kernels.log_binomials(env.n)
    phi_tab = np.ascontiguousarray(phi_tab, dtype=float)
    beta = np.ascontiguousarray(beta, dtype=float)
    total = int(burn_in) + int(T)
    if flips is None:
        flips = draw_flips(rng, env.lam, total)
    theta, x = int(theta0), float(x0)
    # burn-in
    if burn_in > 0:
        _, _, _, _, _, theta, x = kernels.chain_stats(
            phi_tab, beta, env.rho, logc, x, theta, flips[:burn_in], int(burn_in))
    batch = max(1, int(T) // n_batches)
    parts = []
    start = int(burn_in)
    step = max(batch, (chunk // batch) * batch)
    while start < total:
        stop = min(total, start + step)
        out = kernels.chain_stats(phi_tab, beta, env.rho, logc, x, theta,
                                  flips[start:stop], batch)
        parts.append(out[:5])
        theta, x = int(out[5]), float(out[6])
        start = stop
    return ChainSummary(*(np.concatenate([p[i] for p in parts]) for i in range(5)))
