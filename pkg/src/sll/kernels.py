"""Hot loops: long chain simulations, hitting times and the PDMP integrator.

Every kernel exists twice. The ``*_numba`` variant is an ``@njit`` loop; the
``*_numpy`` variant is a pure-numpy / pure-Python path used when numba is
missing or when ``SLL_BACKEND=numpy`` is set in the environment. Both consume
the same pre-drawn random numbers, so they produce the same trajectories up to
floating-point rounding.

The public names (``chain_trajectory``, ``chain_stats``, ...) are bound to the
selected backend at import time; ``BACKEND`` says which one.
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(func):
            return func

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return decorator


def _requested_backend() -> str:
    value = os.environ.get("SLL_BACKEND", "").strip().lower()
    if value in ("numpy", "python", "off", "0"):
        return "numpy"
    return "numba" if NUMBA_AVAILABLE else "numpy"


BACKEND = _requested_backend()

# Bernstein weights switch to log-space above this sample size.
LOG_SPACE_N = 30


def log_binomials(n: int) -> np.ndarray:
    """Return ``log C(n, k)`` for ``k = 0..n``."""
    k = np.arange(n + 1)
    return np.array(
        [math.lgamma(n + 1) - math.lgamma(i + 1) - math.lgamma(n - i + 1) for i in k]
    )


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bern_nb(n, x, logc, out):
    if x <= 0.0:
        for k in range(n + 1):
            out[k] = 0.0
        out[0] = 1.0
        return
    if x >= 1.0:
        for k in range(n + 1):
            out[k] = 0.0
        out[n] = 1.0
        return
    if n <= 30:
        y = 1.0 - x
        for k in range(n + 1):
            out[k] = math.exp(logc[k]) * x**k * y ** (n - k)
    else:
        lx = math.log(x)
        ly = math.log1p(-x)
        for k in range(n + 1):
            out[k] = math.exp(logc[k] + k * lx + (n - k) * ly)


@njit(cache=True)
def _chain_trajectory_numba(phi, rho, logc, x0, theta0, flips):
    n = phi.shape[1] - 1
    T = flips.shape[0]
    th = np.empty(T + 1, dtype=np.int8)
    xs = np.empty(T + 1)
    w = np.empty(n + 1)
    th[0] = theta0
    xs[0] = x0
    theta = theta0
    x = x0
    for t in range(T):
        if flips[t]:
            theta = 1 - theta
        _bern_nb(n, x, logc, w)
        chi = 0.0
        for k in range(n + 1):
            chi += w[k] * phi[theta, k]
        x = (1.0 - rho) * x + rho * chi
        th[t + 1] = theta
        xs[t + 1] = x
    return th, xs


@njit(cache=True)
def _chain_stats_numba(phi, beta, rho, logc, x0, theta0, flips, batch_len):
    n = phi.shape[1] - 1
    T = flips.shape[0]
    nb = (T + batch_len - 1) // batch_len
    counts = np.zeros((nb, 2, n + 1))
    match = np.zeros(nb)
    info = np.zeros(nb)
    mis = np.zeros(nb)
    length = np.zeros(nb)
    w = np.empty(n + 1)
    theta = theta0
    x = x0
    for t in range(T):
        b = t // batch_len
        if flips[t]:
            theta = 1 - theta
        _bern_nb(n, x, logc, w)
        chi = 0.0
        acq = 0.0
        for k in range(n + 1):
            counts[b, theta, k] += w[k]
            chi += w[k] * phi[theta, k]
            acq += w[k] * beta[k]
        if theta == 1:
            match[b] += chi
        else:
            match[b] += 1.0 - chi
        info[b] += acq
        x = (1.0 - rho) * x + rho * chi
        mis[b] += abs(theta - x)
        length[b] += 1.0
    return counts, match, info, mis, length, theta, x


@njit(cache=True)
def _paths_advance_numba(phi, rho, logc, x, theta, flips):
    n = phi.shape[1] - 1
    T, P = flips.shape
    w = np.empty(n + 1)
    for p in range(P):
        xp = x[p]
        tp = theta[p]
        for t in range(T):
            if flips[t, p]:
                tp = 1 - tp
            _bern_nb(n, xp, logc, w)
            chi = 0.0
            for k in range(n + 1):
                chi += w[k] * phi[tp, k]
            xp = (1.0 - rho) * xp + rho * chi
        x[p] = xp
        theta[p] = tp


@njit(cache=True)
def _hit_count_numba(phi1, rho, logc, x, y, cap):
    n = phi1.shape[0] - 1
    w = np.empty(n + 1)
    m = 0
    while x < y:
        if m >= cap:
            return -1
        _bern_nb(n, x, logc, w)
        chi = 0.0
        for k in range(n + 1):
            chi += w[k] * phi1[k]
        xn = (1.0 - rho) * x + rho * chi
        if xn <= x:
            return -1
        x = xn
        m += 1
    return m


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.array(
    [
        [0, 0, 0, 0, 0, 0],
        [1 / 5, 0, 0, 0, 0, 0],
        [3 / 40, 9 / 40, 0, 0, 0, 0],
        [44 / 45, -56 / 15, 32 / 9, 0, 0, 0],
        [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0, 0],
        [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0],
        [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
    ]
)
_DP_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_DP_B4 = np.array(
    [5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)


@njit(cache=True)
def _logit_rhs(y, a, c):
    # dy/dt for y = logit(x) under dx/dt = x(1-x)(a x + c)
    if y >= 0.0:
        s = 1.0 / (1.0 + math.exp(-y))
    else:
        e = math.exp(y)
        s = e / (1.0 + e)
    return a * s + c


@njit(cache=True)
def _dp_advance_nb(y, tau, a, c, h, rtol, atol, A, B5, B4):
    """Integrate the logit flow for time ``tau``; returns (y, last step)."""
    t = 0.0
    k = np.empty(7)
    if h <= 0.0:
        h = min(tau, 0.1)
    while t < tau:
        if t + h > tau:
            h = tau - t
        k[0] = _logit_rhs(y, a, c)
        for s in range(1, 7):
            acc = 0.0
            for j in range(s):
                acc += A[s, j] * k[j]
            k[s] = _logit_rhs(y + h * acc, a, c)
        y5 = y
        y4 = y
        for s in range(7):
            y5 += h * B5[s] * k[s]
            y4 += h * B4[s] * k[s]
        sc = atol + rtol * max(abs(y), abs(y5))
        err = abs(y5 - y4) / sc
        if err <= 1.0:
            t += h
            y = y5
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** (-0.2)))
            h *= fac
        else:
            h *= max(0.2, 0.9 * err ** (-0.2))
    return y, h


@njit(cache=True)
def _pdmp_sample_numba(a, c0, c1, y0, theta0, waits, dt, n_samples, rtol, atol):
    ys = np.empty(n_samples)
    ths = np.empty(n_samples, dtype=np.int8)
    y = y0
    theta = theta0
    h = 0.01
    j = 0
    left = waits[0]  # time until the next state switch
    for i in range(n_samples):
        need = dt
        while need > 0.0:
            c = c1 if theta == 1 else c0
            if left > need:
                y, h = _dp_advance_nb(y, need, a, c, h, rtol, atol, _DP_A, _DP_B5, _DP_B4)
                left -= need
                need = 0.0
            else:
                y, h = _dp_advance_nb(y, left, a, c, h, rtol, atol, _DP_A, _DP_B5, _DP_B4)
                need -= left
                theta = 1 - theta
                j += 1
                if j >= waits.shape[0]:
                    return ys[:i], ths[:i], j
                left = waits[j]
        ys[i] = y
        ths[i] = theta
    return ys, ths, j


# ---------------------------------------------------------------------------
# numpy / pure-Python fallbacks
# ---------------------------------------------------------------------------


def bernstein(n: int, x, logc: np.ndarray | None = None) -> np.ndarray:
    """Binomial weights ``C(n,k) x^k (1-x)^(n-k)``, shape ``x.shape + (n+1,)``."""
    x = np.asarray(x, dtype=float)
    if logc is None:
        logc = log_binomials(n)
    xs = np.clip(x, 0.0, 1.0)[..., None]
    k = np.arange(n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        if n <= LOG_SPACE_N:
            out = np.exp(logc) * xs**k * (1.0 - xs) ** (n - k)
        else:
            lx = np.log(xs)
            ly = np.log1p(-xs)
            expo = logc + np.where(k > 0, k * lx, 0.0) + np.where(n - k > 0, (n - k) * ly, 0.0)
            out = np.exp(expo)
    return out


def _chain_trajectory_numpy(phi, rho, logc, x0, theta0, flips):
    n = phi.shape[1] - 1
    T = flips.shape[0]
    th = np.empty(T + 1, dtype=np.int8)
    xs = np.empty(T + 1)
    th[0] = theta0
    xs[0] = x0
    theta = int(theta0)
    x = float(x0)
    rows = (phi[0].tolist(), phi[1].tolist())
    for t in range(T):
        if flips[t]:
            theta = 1 - theta
        w = bernstein(n, x, logc)
        chi = float(np.dot(w, rows[theta]))
        x = (1.0 - rho) * x + rho * chi
        th[t + 1] = theta
        xs[t + 1] = x
    return th, xs


def _chain_stats_numpy(phi, beta, rho, logc, x0, theta0, flips, batch_len):
    n = phi.shape[1] - 1
    th, xs = _chain_trajectory_numpy(phi, rho, logc, x0, theta0, flips)
    T = flips.shape[0]
    nb = (T + batch_len - 1) // batch_len
    theta = th[1:].astype(np.int64)
    w = bernstein(n, xs[:-1], logc)
    chi = np.einsum("tk,tk->t", w, phi[theta])
    acq = w @ beta
    match = np.where(theta == 1, chi, 1.0 - chi)
    mis = np.abs(theta - xs[1:])
    b = np.arange(T) // batch_len
    counts = np.zeros((nb, 2, n + 1))
    np.add.at(counts, (b, theta), w)
    out = (
        counts,
        np.bincount(b, match, nb),
        np.bincount(b, acq, nb),
        np.bincount(b, mis, nb),
        np.bincount(b, None, nb).astype(float),
        int(th[-1]),
        float(xs[-1]),
    )
    return out


def _paths_advance_numpy(phi, rho, logc, x, theta, flips):
    n = phi.shape[1] - 1
    for t in range(flips.shape[0]):
        theta ^= flips[t].astype(theta.dtype)
        w = bernstein(n, x, logc)
        chi = np.einsum("pk,pk->p", w, phi[theta])
        x[:] = (1.0 - rho) * x + rho * chi


def _hit_count_numpy(phi1, rho, logc, x, y, cap):
    n = phi1.shape[0] - 1
    m = 0
    while x < y:
        if m >= cap:
            return -1
        xn = (1.0 - rho) * x + rho * float(bernstein(n, x, logc) @ phi1)
        if xn <= x:
            return -1
        x = xn
        m += 1
    return m


def _logit_rhs_py(y, a, c):
    if y >= 0.0:
        s = 1.0 / (1.0 + math.exp(-y))
    else:
        e = math.exp(y)
        s = e / (1.0 + e)
    return a * s + c


def _dp_advance_py(y, tau, a, c, h, rtol, atol):
    A, B5, B4 = _DP_A, _DP_B5, _DP_B4
    t = 0.0
    k = [0.0] * 7
    if h <= 0.0:
        h = min(tau, 0.1)
    while t < tau:
        if t + h > tau:
            h = tau - t
        k[0] = _logit_rhs_py(y, a, c)
        for s in range(1, 7):
            acc = 0.0
            for j in range(s):
                acc += A[s, j] * k[j]
            k[s] = _logit_rhs_py(y + h * acc, a, c)
        y5 = y + h * sum(B5[s] * k[s] for s in range(7))
        y4 = y + h * sum(B4[s] * k[s] for s in range(7))
        sc = atol + rtol * max(abs(y), abs(y5))
        err = abs(y5 - y4) / sc
        if err <= 1.0:
            t += h
            y = y5
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** (-0.2)))
            h *= fac
        else:
            h *= max(0.2, 0.9 * err ** (-0.2))
    return y, h


def _pdmp_sample_numpy(a, c0, c1, y0, theta0, waits, dt, n_samples, rtol, atol):
    ys = np.empty(n_samples)
    ths = np.empty(n_samples, dtype=np.int8)
    y = float(y0)
    theta = int(theta0)
    h = 0.01
    j = 0
    left = float(waits[0])
    for i in range(n_samples):
        need = dt
        while need > 0.0:
            c = c1 if theta == 1 else c0
            if left > need:
                y, h = _dp_advance_py(y, need, a, c, h, rtol, atol)
                left -= need
                need = 0.0
            else:
                y, h = _dp_advance_py(y, left, a, c, h, rtol, atol)
                need -= left
                theta = 1 - theta
                j += 1
                if j >= waits.shape[0]:
                    return ys[:i], ths[:i], j
                left = float(waits[j])
        ys[i] = y
        ths[i] = theta
    return ys, ths, j


def flow_advance(y: float, tau: float, a: float, c: float, rtol: float = 1e-9,
                 atol: float = 1e-12) -> float:
    """Integrate ``dy/dt = a*sigmoid(y) + c`` for time ``tau`` (backend-selected)."""
    if BACKEND == "numba":
        return float(_dp_advance_nb(y, tau, a, c, 0.0, rtol, atol, _DP_A, _DP_B5, _DP_B4)[0])
    return float(_dp_advance_py(y, tau, a, c, 0.0, rtol, atol)[0])


IMPLEMENTATIONS = {
    "numba": {
        "chain_trajectory": _chain_trajectory_numba,
        "chain_stats": _chain_stats_numba,
        "paths_advance": _paths_advance_numba,
        "hit_count": _hit_count_numba,
        "pdmp_sample": _pdmp_sample_numba,
    },
    "numpy": {
        "chain_trajectory": _chain_trajectory_numpy,
        "chain_stats": _chain_stats_numpy,
        "paths_advance": _paths_advance_numpy,
        "hit_count": _hit_count_numpy,
        "pdmp_sample": _pdmp_sample_numpy,
    },
}

_active = IMPLEMENTATIONS[BACKEND]
chain_trajectory = _active["chain_trajectory"]
chain_stats = _active["chain_stats"]
paths_advance = _active["paths_advance"]
hit_count = _active["hit_count"]
pdmp_sample = _active["pdmp_sample"]
