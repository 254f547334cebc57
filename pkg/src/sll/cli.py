"""Command-line experiment runner.

Every invocation writes run records, one per result. A record holds the
schema version, the command, the fully resolved configuration (seed
included), the result payload, the wall time and library versions.

Records are written as JSON lines (default) or CSV. CSV columns are
``command``, then the configuration fields in flag order, then the result
fields in payload order, then ``wall_time``; nested keys are joined with
``.`` and list entries get their index appended.

A configuration file holds ``key = value`` lines named after the long flags
(``lambda = 0.01``); flags given on the command line win.

Exit codes: 0 ok, 2 invalid configuration, 3 non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import itertools
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata

import numpy as np

from . import __version__, ess, kernels, pdmp, planner, smallsample
from .core import ConfigError, ConvergenceError, DomainError, Environment, Strategy

SCHEMA_VERSION = 1
SWEEP_AXES = ("lambda", "rho", "cost", "n", "pi")
# configuration keys that never enter a record
_PLUMBING = {"output", "format", "config", "command", "action", "func"}


class IOFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def jsonable(obj):
    """Plain JSON types from results: dataclasses, numpy arrays and scalars."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return jsonable(obj.to_dict())
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.repr}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(record: dict) -> str:
    # repr-based float output is the shortest round-trip form
    return json.dumps(record, separators=(",", ":"))


def flatten(d, prefix: str = "") -> dict:
    out = {}
    if isinstance(d, dict):
        for k, v in d.items():
            out.update(flatten(v, f"{prefix}{k}."))
    elif isinstance(d, list):
        for i, v in enumerate(d):
            out.update(flatten(v, f"{prefix}{i}."))
    else:
        out[prefix[:-1]] = d
    return out


def csv_row(record: dict) -> dict:
    row = {"command": record["command"]}
    row.update(flatten(record["config"]))
    if "rows" not in record["result"]:
        row.update(flatten(record["result"]))
    if "error" in record:
        row.update(flatten({"error": record["error"]}))
    row["wall_time"] = record["wall_time"]
    return row


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def emit(records, fmt: str, stream, header=()) -> None:
    """Write ``records`` to ``stream`` as JSON lines or CSV.

    ``header`` supplies CSV columns when there are no records.
    """
    records = list(records)
    if fmt == "jsonl":
        for r in records:
            stream.write(dumps(r) + "\n")
        return
    table = []
    for r in records:
        if "rows" in r["result"]:
            table.extend(r["result"]["rows"])
        else:
            table.append(csv_row(r))
    cols = list(header)
    for row in table:
        for k in row:
            if k not in cols:
                cols.append(k)
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(cols)
    for row in table:
        w.writerow([_fmt(row.get(c)) for c in cols])


def parse_jsonl(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def versions() -> dict:
    out = {"sll": __version__, "backend": kernels.BACKEND}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def _rng_seed(cfg: dict):
    return np.random.SeedSequence(int(cfg["seed"]), spawn_key=tuple(cfg.get("spawn_key") or ()))


def _env(cfg: dict, n: int | None = None) -> Environment:
    return Environment.binary(cfg["lambda"], cfg["pi"], cfg["cost"],
                              cfg["n"] if n is None else n, rho=cfg["rho"])


def run_solve_n1(cfg):
    return [smallsample.solve_n1(_env(cfg, 1))]


def run_solve_n2(cfg):
    r = smallsample.solve_n2(_env(cfg, 2), sim_budget=int(cfg["sim_budget"]),
                             seed=_rng_seed(cfg))
    return [r]


def run_n2_absorb(cfg):
    r = smallsample.n2_absorption_test(cfg["phi1"], _env(cfg, 2), int(cfg["paths"]),
                                       int(cfg["horizon"]), cfg["eps"], seed=_rng_seed(cfg))
    return [r]


def _ess_payload(r: ess.ESSResult) -> dict:
    return {
        "beta": r.strategy.beta, "log_beta": r.log_beta, "beliefs": r.p,
        "welfare": r.welfare, "kappa": r.kappa, "info_rate": r.info_rate,
        "consensus": r.consensus, "residual": r.residual, "iterations": r.iterations,
        "evaluations": r.evaluations, "regular": r.regular, "grid_size": r.measure.grid.size,
    }


def run_solve_ess(cfg):
    env = _env(cfg)
    init = None
    if cfg.get("init"):
        b = np.array(_floats(cfg["init"]))
        if b.size != env.n + 1:
            raise ConfigError("init", f"need {env.n + 1} acquisition probabilities")
        init = Strategy(b, np.full(env.n + 1, 0.5))
    r = ess.solve_ess(env, grid_size=int(cfg["grid_size"]), damping=cfg["damping"],
                      tol=cfg["tol"], max_iter=int(cfg["max_iter"]), init=init,
                      grid_kind=cfg["grid_kind"], max_evaluations=int(cfg["max_evaluations"]))
    return [_ess_payload(r)]


def run_pdmp(cfg):
    action = cfg["action"]
    if action == "find-bstar":
        r = pdmp.find_b_star(cfg["lambda"], cfg["pi"], cfg["cost"])
        return [{"b": r.b, "lr": r.lr, "beliefs": r.beliefs, "welfare": r.welfare,
                 "p_hat": r.p_hat, "bracket": r.bracket, "lr2_max": r.lr2_max,
                 "ordering_holds": r.ordering_holds}]
    conf = pdmp.PdmpConfig(cfg["lambda"], cfg["pi"], cfg["b"])
    if action == "lr":
        return [{"lr": [pdmp.lr_k(conf, k) for k in range(4)]}]
    if action == "density":
        d = pdmp.invariant_density(conf, grid_size=int(cfg["grid_size"]))
        if cfg.get("format") == "csv":
            rows = [{"x": float(x), "f0": float(a), "f1": float(b)}
                    for x, a, b in zip(d.x, d.f0, d.f1)]
            return [{"rows": rows}]
        return [{"x": d.x, "f0": d.f0, "f1": d.f1, "mass": d.mass,
                 "norm_constant": d.norm_constant}]
    if action == "discretize":
        r = pdmp.discretization_check(conf, eps_list=tuple(_floats(cfg["eps_list"])),
                                      sim_budget=cfg["sim_budget"], seed=_rng_seed(cfg))
        return [r]
    raise ConfigError("action", f"unknown pdmp action {action!r}")


def run_planner(cfg):
    lams = _floats(cfg["lambda_grid"])
    reports = []
    ss = _rng_seed(cfg)
    for i, lam in enumerate(lams):
        env = Environment.binary(lam, cfg["pi"], cfg["cost"], cfg["n"], rho=cfg["rho"])
        seed = np.random.SeedSequence(ss.entropy, spawn_key=ss.spawn_key + (i,))
        reports.append(planner.planner_welfare(env, sim_budget=int(cfg["sim_budget"]),
                                               seed=seed))
    A = planner.fit_loss_constant(reports) if reports else float("nan")
    out = []
    for r in reports:
        out.append({"lambda": r.lam, "W": r.welfare, "info_rate": r.info_rate,
                    "m_hit": r.m_hit, "bound": r.analytic_welfare, "fitted_A": A,
                    "details": r.to_dict()})
    return out


RUNNERS = {
    "solve-n1": run_solve_n1,
    "solve-n2": run_solve_n2,
    "n2-absorb": run_n2_absorb,
    "solve-ess": run_solve_ess,
    "pdmp": run_pdmp,
    "planner": run_planner,
}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser, defaults: dict, env_flags=("lambda", "pi", "cost",
                                                                    "n", "rho")):
    spec = {"lambda": float, "pi": float, "cost": float, "n": int, "rho": float}
    for name in env_flags:
        p.add_argument(f"--{name}", dest=name, type=spec[name], default=defaults.get(name))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spawn-key", dest="spawn_key", type=lambda s: [int(t) for t in
                   s.split(",") if t], default=[], help=argparse.SUPPRESS)
    p.add_argument("-o", "--output", default="-")
    p.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    p.add_argument("--config", default=None, help="file of key = value lines")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sll", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-n1", help="closed-form equilibrium for one-action samples")
    _common(p, {"lambda": 0.05, "pi": 0.8, "cost": 0.1, "rho": 1.0},
            env_flags=("lambda", "pi", "cost", "rho"))

    p = sub.add_parser("solve-n2", help="simulation-assisted equilibrium for two-action samples")
    _common(p, {"lambda": 0.05, "pi": 0.8, "cost": 0.1, "rho": 1.0},
            env_flags=("lambda", "pi", "cost", "rho"))
    p.add_argument("--sim-budget", dest="sim_budget", type=float, default=2e6)

    p = sub.add_parser("n2-absorb", help="herding absorption experiment")
    _common(p, {"lambda": 0.01, "pi": 0.8, "cost": 0.1, "rho": 1.0},
            env_flags=("lambda", "pi", "cost", "rho"))
    p.add_argument("--phi1", type=float, default=0.8)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--horizon", type=float, default=1e5)
    p.add_argument("--eps", type=float, default=1e-3)

    p = sub.add_parser("solve-ess", help="stationary equilibrium on a discretized state space")
    _common(p, {"lambda": 0.01, "pi": 0.9, "cost": 0.1, "n": 3, "rho": 1.0})
    p.add_argument("--grid-size", "-M", dest="grid_size", type=int, default=4096)
    p.add_argument("--damping", type=float, default=0.3)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=200)
    p.add_argument("--max-evaluations", dest="max_evaluations", type=int, default=400)
    p.add_argument("--grid-kind", dest="grid_kind", choices=("clustered", "uniform"),
                   default="clustered")
    p.add_argument("--init", default=None, help="comma-separated starting acquisition")

    p = sub.add_parser("pdmp", help="continuous-time limit with three-action samples")
    p.add_argument("action", choices=("density", "lr", "find-bstar", "discretize"))
    _common(p, {"lambda": 0.05, "pi": 0.6, "cost": 0.05}, env_flags=("lambda", "pi", "cost"))
    p.add_argument("--b", type=float, default=0.8)
    p.add_argument("--grid-size", dest="grid_size", type=int, default=8192)
    p.add_argument("--eps-list", dest="eps_list", default="0.2,0.1,0.05")
    p.add_argument("--sim-budget", dest="sim_budget", type=float, default=2e5)

    p = sub.add_parser("planner", help="welfare of the planner's strategy")
    _common(p, {"pi": 0.8, "cost": 0.1, "n": 4, "rho": 1.0},
            env_flags=("pi", "cost", "n", "rho"))
    p.add_argument("--lambda-grid", dest="lambda_grid", default="1e-2,1e-3,1e-4")
    p.add_argument("--sim-budget", dest="sim_budget", type=float, default=1e6)

    p = sub.add_parser("sweep", help="cross-product of comma-separated axes for a subcommand",
                       add_help=False)
    p.add_argument("target", choices=tuple(RUNNERS))
    p.add_argument("rest", nargs=argparse.REMAINDER)
    return ap


def _subparser(ap: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in ap._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def read_config_file(path: str) -> dict:
    out = {}
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise IOFailure(f"cannot read config {path}: {exc}") from exc
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("config", f"line {ln}: expected key = value")
        k, v = (t.strip() for t in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def resolve(sp: argparse.ArgumentParser, argv: list[str]) -> dict:
    """Parse ``argv`` with ``sp``, filling unset flags from ``--config``."""
    ns = sp.parse_args(argv)
    if ns.config:
        given = {a.dest for a in sp._actions
                 if any(opt in argv or any(s.startswith(opt + "=") for s in argv)
                        for opt in a.option_strings)}
        types = {a.dest: a.type for a in sp._actions}
        for k, v in read_config_file(ns.config).items():
            if k not in types:
                raise ConfigError(k, "unknown configuration key")
            if k in given:
                continue
            setattr(ns, k, types[k](v) if types[k] else v)
    return vars(ns)


def record_config(cfg: dict) -> dict:
    out = {k: v for k, v in cfg.items() if k not in _PLUMBING}
    if cfg.get("action"):
        out = {"action": cfg["action"], **out}
    return out


def execute(command: str, cfg: dict) -> list[dict]:
    """Run one configuration; return its records. Errors become records with ``error``."""
    t0 = time.perf_counter()
    base = {"schema": SCHEMA_VERSION, "command": command, "config": record_config(cfg)}
    try:
        payloads = RUNNERS[command](cfg)
    except ConvergenceError as exc:
        rec = dict(base, result={}, error={"kind": "convergence", "message": str(exc),
                                           "residual": exc.residual,
                                           "diagnostics": jsonable(exc.diagnostics)})
        rec.update(wall_time=time.perf_counter() - t0, versions=versions())
        return [rec]
    wall = time.perf_counter() - t0
    return [dict(base, result=jsonable(p), wall_time=wall, versions=versions())
            for p in payloads]


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


def _split_axes(rest: list[str]) -> tuple[dict, list[str]]:
    axes, other = {}, []
    i = 0
    while i < len(rest):
        tok = rest[i]
        name, val = None, None
        if tok.startswith("--"):
            key = tok[2:]
            if "=" in key:
                key, val = key.split("=", 1)
            if key in SWEEP_AXES:
                name = key
                if val is None:
                    i += 1
                    if i >= len(rest):
                        raise ConfigError(key, "missing value")
                    val = rest[i]
        if name is None:
            other.append(tok)
        else:
            axes[name] = [t for t in val.split(",") if t.strip()]
        i += 1
    return axes, other


def _axis_value(name: str, text: str):
    return int(text) if name == "n" else float(text)


def _run_cell(args):
    command, cfg = args
    return execute(command, cfg)


def threads() -> int:
    raw = os.environ.get("SLL_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("SLL_THREADS", f"expected an integer, got {raw!r}") from None
    return max(1, n)


def sweep_cells(ap: argparse.ArgumentParser, target: str, rest: list[str]):
    """Expand axes into sorted cells; cell ``i`` gets spawn key ``(i,)``."""
    sp = _subparser(ap, target)
    axes, other = _split_axes(rest)
    base = resolve(sp, other)
    allowed = {a.dest for a in sp._actions}
    for name in axes:
        if name not in allowed:
            raise ConfigError(name, f"not an axis of {target}")
    names = [a for a in SWEEP_AXES if a in axes]
    values = [sorted({_axis_value(a, t) for t in axes[a]}) for a in names]
    cells = []
    for i, combo in enumerate(itertools.product(*values)):
        cfg = dict(base)
        cfg.update(zip(names, combo))
        cfg["spawn_key"] = [i]
        cells.append(cfg)
    return base, cells


def run_sweep(ap, target, rest) -> tuple[list[dict], dict]:
    base, cells = sweep_cells(ap, target, rest)
    jobs = [(target, c) for c in cells]
    workers = min(threads(), max(1, len(jobs)))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    key = lambda rec: tuple(rec["config"].get(a, 0) for a in SWEEP_AXES)  # noqa: E731
    records = sorted((r for rs in results for r in rs), key=key)
    return records, base


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _open(path: str):
    if path == "-":
        return sys.stdout, False
    try:
        return open(path, "w", newline=""), True
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if ns.command == "sweep":
            records, cfg = run_sweep(ap, ns.target, ns.rest)
            command = ns.target
        else:
            command = ns.command
            cfg = resolve(_subparser(ap, command), argv[1:])
            records = execute(command, cfg)
        header = ["command", *record_config(cfg)] if not records else ()
        buf = io.StringIO()
        emit(records, cfg["format"], buf, header=header)
        stream, close = _open(cfg["output"])
        try:
            stream.write(buf.getvalue())
            stream.flush()
        except OSError as exc:
            raise IOFailure(f"cannot write {cfg['output']}: {exc}") from exc
        finally:
            if close:
                stream.close()
    except (ConfigError, DomainError) as exc:
        print(f"sll: error: {exc}", file=sys.stderr)
        return 2
    except IOFailure as exc:
        print(f"sll: error: {exc}", file=sys.stderr)
        return 4
    except SystemExit as exc:  # argparse inside a sweep
        return int(exc.code or 0)
    failed = [r for r in records if "error" in r]
    if failed:
        print(f"sll: error: {failed[0]['error']['message']}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
