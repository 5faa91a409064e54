"""Command line front end.

Exit codes: 0 success, 2 unreadable or malformed input, 3 model validation
failure, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import statistics
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import optimizer as opt
from .branching import ConvergenceError
from .fluid import FluidError, analyze, beta, evaluate_many, sample_trajectory, total_slopes
from .model import INF, ModelError, SpecFormatError, spec_from_dict, spec_to_dict, validate
from .sim import SimulationError, estimate_xi, simulate_scaled

EXIT_OK, EXIT_PARSE, EXIT_MODEL, EXIT_NUMERIC = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return "inf" if x == INF else x
    if isinstance(x, np.integer):
        return int(x)
    return x


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2) + "\n"


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _path_csv(grid, values) -> str:
    N = values.shape[1]
    header = ["t"] + [f"x{j + 1}" for j in range(N)] + ["total"]
    rows = ([float(t)] + [float(v) for v in row] + [float(row.sum())] for t, row in zip(grid, values))
    return _csv(header, rows)


def load_spec_document(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_PARSE, f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def load_spec(path: str):
    doc = load_spec_document(path)
    try:
        spec = spec_from_dict(doc)
    except SpecFormatError as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from None
    report = validate(spec)
    if not report.ok:
        raise CliError(EXIT_MODEL, "; ".join(report.errors))
    return doc, spec, report


def parse_window(text: str) -> np.ndarray:
    """``LO:HI:STEP`` (HI included when it lies on the lattice) or a single ``HI``."""
    try:
        parts = [float(p) for p in text.split(":")]
    except ValueError:
        raise CliError(EXIT_PARSE, f"--window: cannot parse {text!r}") from None
    if len(parts) == 1:
        hi = parts[0]
        if hi < 0:
            raise CliError(EXIT_PARSE, "--window: negative time")
        return np.array([0.0]) if hi == 0 else np.linspace(0.0, hi, 1001)
    if len(parts) != 3:
        raise CliError(EXIT_PARSE, "--window: expected LO:HI:STEP")
    lo, hi, step = parts
    if lo < 0 or hi < lo or step <= 0:
        raise CliError(EXIT_PARSE, "empty grid")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(count)


def parse_ints(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise CliError(EXIT_PARSE, f"expected comma-separated integers, got {text!r}") from None


def parse_candidates(text: str) -> list:
    out = []
    for p in text.split(","):
        p = p.strip()
        if p == "inf":
            out.append(INF)
        elif p.isdigit() and int(p) >= 1:
            out.append(int(p))
        else:
            raise CliError(EXIT_PARSE, f"--candidates: bad gating index {p!r}")
    return out


def write_manifest(out: Path, args, seeds, started: float) -> None:
    manifest = {
        "command": args.command,
        "spec": os.path.abspath(args.spec),
        "seeds": seeds,
        "out": str(out.resolve()),
        "version": __version__,
        "argv": sys.argv[1:],
        "wall_clock_seconds": time.time() - started,
    }
    _atomic_write(out / "manifest.json", _dump(manifest))


# ---------------------------------------------------------------- commands


def cmd_analyze(args) -> dict:
    _, spec, report = load_spec(args.spec)
    dq, om, pe, sk = analyze(spec)
    report_json = {
        "spec": spec_to_dict(spec),
        "warnings": report.warnings,
        "derived": {
            "gamma": dq.gamma, "cbar": dq.cbar, "rho_gamma": dq.rho_gamma,
            "rho_lambda_cbar": dq.rho_lc, "rho": dq.rho, "bE": dq.bE, "phi": dq.phi,
            "f": dq.f, "t": dq.t, "mu": dq.mu,
        },
        "Mk": list(om.Mk),
        "M": om.M,
        "visit_offspring": om.mcheck,
        "session_offspring": om.msession,
        "theta": pe.theta,
        "v": pe.v,
        "u": pe.u,
        "beta": beta(sk),
    }
    if args.out:
        _atomic_write(Path(args.out) / "analyze.json", _dump(report_json))
    return report_json


def _skeleton_json(spec, pe, sk) -> dict:
    return {
        "alpha": sk.alpha, "theta": sk.theta, "bbar": sk.bbar, "abar": sk.abar,
        "b": sk.b, "a": sk.a, "beta": beta(sk), "total_slopes": total_slopes(sk, spec),
        "v": pe.v, "u": pe.u,
    }


def cmd_fluid(args) -> dict:
    _, spec, _ = load_spec(args.spec)
    grid = parse_window(args.window or "0:10:0.01")
    _, _, pe, sk = analyze(spec)
    if args.xi is None:
        values = evaluate_many(sk, grid)
    else:
        try:
            values = sample_trajectory(sk, args.xi, grid)
        except ValueError as exc:
            raise CliError(EXIT_PARSE, f"--xi: {exc}") from None
    summary = _skeleton_json(spec, pe, sk)
    summary["xi"] = 1.0 if args.xi is None else args.xi
    if args.out:
        out = Path(args.out)
        _atomic_write(out / "skeleton.json", _dump(summary))
        _atomic_write(out / "trajectory.csv", _path_csv(grid, values))
    return summary


def _sim_settings(args, doc) -> tuple[list[int], int, int, np.ndarray]:
    sim = doc.get("sim", {}) if isinstance(doc, dict) else {}
    if not isinstance(sim, dict):
        raise CliError(EXIT_PARSE, "sim: expected an object")
    ns = parse_ints(args.n) if args.n else sim.get("n", [8])
    ns = [ns] if isinstance(ns, int) else list(ns)
    seeds = args.seeds if args.seeds is not None else int(sim.get("seeds", 1))
    seed = args.seed if args.seed is not None else int(sim.get("seed", 0))
    window = args.window or sim.get("window", "0.5:5:0.01")
    grid = parse_window(str(window))
    if seeds < 1:
        raise CliError(EXIT_PARSE, "--seeds must be at least 1")
    if grid.size == 0 or grid.max() <= 0:
        raise CliError(EXIT_PARSE, "empty grid")
    return ns, seeds, seed, grid


def _simulate_runs(args, write_traces: bool):
    doc, spec, _ = load_spec(args.spec)
    ns, seeds, seed, grid = _sim_settings(args, doc)
    _, _, pe, sk = analyze(spec)
    runs = []
    out = Path(args.out) if args.out else None
    for n in ns:
        for rep in range(seeds):
            entry = {"n": n, "replication": rep, "seed": seed}
            try:
                trace, st = simulate_scaled(spec, pe.theta, n, grid, seed=seed, replication_id=rep,
                                            event_cap=args.event_cap)
                keep = st.grid > 0
                xi, dist = estimate_xi(replace(st, grid=st.grid[keep], values=st.values[keep]), sk)
                entry.update(ok=True, xi_hat=xi, fit_distance=dist, events=trace.event_count,
                             cycles=int(trace.cycle_instants.size))
                if write_traces and out is not None:
                    _atomic_write(out / f"scaled_n{n}_rep{rep}.csv", _path_csv(st.grid, st.values))
                    _atomic_write(out / f"cycles_n{n}_rep{rep}.csv",
                                  _csv(["n", "t_cycle"], ((k + 1, float(t)) for k, t in enumerate(trace.cycle_instants))))
            except SimulationError as exc:
                entry.update(ok=False, error=str(exc))
            runs.append(entry)
    return spec, pe, ns, seeds, seed, runs


def cmd_simulate(args) -> dict:
    _, pe, ns, seeds, seed, runs = _simulate_runs(args, write_traces=True)
    summary = {"theta": pe.theta, "seed": seed, "seeds": seeds, "n": ns, "runs": runs}
    if args.out:
        _atomic_write(Path(args.out) / "summary.json", _dump(summary))
    if not any(r["ok"] for r in runs):
        raise CliError(EXIT_NUMERIC, "every simulation run failed: " + runs[0].get("error", ""))
    return summary


def cmd_validate(args) -> dict:
    _, pe, ns, seeds, seed, runs = _simulate_runs(args, write_traces=False)
    table = []
    for n in ns:
        dists = [r["fit_distance"] for r in runs if r["n"] == n and r["ok"]]
        table.append({
            "n": n,
            "median_distance": statistics.median(dists) if dists else None,
            "runs": len(dists),
            "failures": sum(1 for r in runs if r["n"] == n and not r["ok"]),
        })
    meds = [row["median_distance"] for row in table if row["median_distance"] is not None]
    result = {
        "theta": pe.theta, "seed": seed, "seeds": seeds, "table": table,
        "nonincreasing": all(a >= b for a, b in zip(meds, meds[1:])),
        "runs": runs,
    }
    if args.out:
        _atomic_write(Path(args.out) / "convergence.json", _dump(result))
    if not meds:
        raise CliError(EXIT_NUMERIC, "every simulation run failed")
    return result


def cmd_optimize(args) -> dict:
    _, spec, _ = load_spec(args.spec)
    if args.candidates:
        cands = [parse_candidates(args.candidates)] * spec.N
    else:
        cands = opt.default_candidates(spec.N, args.kmax)
    if args.mode == "exhaustive":
        try:
            res = opt.exhaustive_search(spec, cands)
        except opt.SearchSpaceError as exc:
            raise CliError(EXIT_MODEL, str(exc)) from None
    else:
        params = opt.GAParams(population=args.population, generations=args.generations,
                              mutation=args.mutation, crossover=args.crossover,
                              seed=0 if args.seed is None else args.seed)
        res = opt.genetic_search(spec, cands, params)
    result = {
        "mode": args.mode,
        "best": list(res.best),
        "beta": res.best_beta,
        "evaluations": res.evaluations,
        "history": [[it, b] for it, b in res.history],
    }
    if args.out:
        out = Path(args.out)
        _atomic_write(out / "optimize.json", _dump(result))
        _atomic_write(out / "history.csv", _csv(["iteration", "best_beta"], res.history))
    if args.mode == "exhaustive":
        # one entry per assignment; keep stdout readable
        result = dict(result, history=result["history"][-1:])
    return result


COMMANDS = {
    "analyze": cmd_analyze,
    "fluid": cmd_fluid,
    "simulate": cmd_simulate,
    "validate": cmd_validate,
    "optimize": cmd_optimize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pollfluid", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--spec", required=True, help="network spec JSON")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("analyze", help="derived quantities, offspring matrices, Perron pair")
    common(p)

    p = sub.add_parser("fluid", help="fluid skeleton and trajectory CSV")
    common(p)
    p.add_argument("--window", help="time grid LO:HI:STEP (default 0:10:0.01)")
    p.add_argument("--xi", type=float, help="time scale in [1, theta) for xi * X(t / xi)")

    for name, text in (("simulate", "scaled simulation traces and xi fits"),
                       ("validate", "convergence table of scaled traces vs. the fluid limit")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--n", help="scaling exponents, e.g. 2,4,6,8")
        p.add_argument("--seeds", type=int, help="replications per exponent")
        p.add_argument("--seed", type=int, help="base seed (U64)")
        p.add_argument("--window", help="scaled time grid LO:HI:STEP (default 0.5:5:0.01)")
        p.add_argument("--event-cap", type=int, default=10**8, dest="event_cap")

    p = sub.add_parser("optimize", help="search gating indexes minimizing beta")
    common(p)
    p.add_argument("--mode", choices=("exhaustive", "ga"), default="exhaustive")
    p.add_argument("--kmax", type=int, default=32)
    p.add_argument("--candidates", help="comma-separated indexes per queue, e.g. 1,2,inf")
    p.add_argument("--seed", type=int)
    p.add_argument("--population", type=int, default=20)
    p.add_argument("--generations", type=int, default=100)
    p.add_argument("--mutation", type=float, default=0.1)
    p.add_argument("--crossover", type=float, default=0.8)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.time()
    try:
        result = COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (ConvergenceError, FluidError, SimulationError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.out:
        seeds = getattr(args, "seeds", None)
        seed = getattr(args, "seed", None)
        write_manifest(Path(args.out), args, {"seed": seed, "seeds": seeds}, started)
    sys.stdout.write(_dump(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
