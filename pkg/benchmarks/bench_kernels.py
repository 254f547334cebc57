#!/usr/bin/env python3
"""Time every hot kernel under the numba and numpy backends and check they agree.

Usage: python3 benchmarks/bench_kernels.py [--scale 1.0] [--json out.json]
"""

import argparse
import json
import math
import sys
import time

import numpy as np

from sll import kernels
from sll.core import Environment, Strategy, phi_table

WARMUP_RUNS = 1
BENCH_RUNS = 3
SEED = 42


def _cases(scale: float):
    rng = np.random.default_rng(SEED)
    env = Environment.binary(0.01, 0.8, 0.1, 4)
    st = Strategy([0.05, 0.6, 1.0, 0.6, 0.05], [0.2, 0.4, 0.5, 0.6, 0.8])
    phi = phi_table(st, env)
    logc = kernels.log_binomials(4)
    T = int(200_000 * scale)
    flips = (rng.random(T) < env.lam).astype(np.uint8)
    P, H = int(200 * scale) or 1, 1000
    pflips = (rng.random((H, P)) < env.lam).astype(np.uint8)
    x0 = rng.random(P)
    th0 = rng.integers(0, 2, P).astype(np.int64)
    waits = rng.exponential(1.0 / 0.2, int(2000 * scale) + 10)
    n_pdmp = int(20_000 * scale)

    def paths(impl):
        x, th = x0.copy(), th0.copy()
        impl(phi, 1.0, logc, x, th, pflips)
        return x

    return {
        "chain_trajectory": lambda f: f(phi, 1.0, logc, 0.5, 0, flips)[1],
        "chain_stats": lambda f: f(phi, st.beta, 1.0, logc, 0.5, 0, flips, 1000)[1],
        "paths_advance": paths,
        "hit_count": lambda f: np.array([f(phi[1].copy(), 0.5, logc, 1e-9, 1 - 1e-6, 10**8)]),
        "pdmp_sample": lambda f: f(-0.25, 0.8, 0.2, 0.0, 1, waits, 0.5, n_pdmp, 1e-9, 1e-12)[0],
    }


def bench(call, impl, warmup=WARMUP_RUNS, runs=BENCH_RUNS):
    for _ in range(warmup):
        out = call(impl)
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        out = call(impl)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    ap.add_argument("--json", default=None, help="write results to this file")
    args = ap.parse_args(argv)
    if not kernels.NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy backend can run", file=sys.stderr)
        return 1
    rows = []
    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max |diff|':>13}")
    for name, call in _cases(args.scale).items():
        t_nb, out_nb = bench(call, kernels.IMPLEMENTATIONS["numba"][name])
        t_np, out_np = bench(call, kernels.IMPLEMENTATIONS["numpy"][name])
        diff = float(np.max(np.abs(np.asarray(out_nb, float) - np.asarray(out_np, float))))
        speed = t_np / t_nb if t_nb > 0 else math.inf
        rows.append({"kernel": name, "numba": t_nb, "numpy": t_np, "speedup": speed,
                     "max_abs_diff": diff})
        print(f"{name:<18}{t_nb:>12.4f}{t_np:>12.4f}{speed:>10.1f}{diff:>13.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
