"""Compare the compiled and pure-Python simulation kernels.

Runs the same seeded simulations through both kernels, checks that the
traces are bit-identical and reports wall-clock times.

    python3 benchmarks/bench_kernel.py --n 4 5 6 --repeat 3
"""
import argparse
import time

import numpy as np

from pollfluid import analyze, example_spec
from pollfluid import sim
from pollfluid.sim import SimConfig, _kernel_py


def timed(spec, cfg, repeat):
    best, trace = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        trace = sim.run(spec, cfg)
        best = min(best, time.perf_counter() - t0)
    return best, trace


def same(a, b):
    return (np.array_equal(a.queue_path, b.queue_path) and np.array_equal(a.occupation, b.occupation)
            and np.array_equal(a.cycle_instants, b.cycle_instants) and a.event_count == b.event_count)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[4, 5, 6], help="horizon exponents (theta**n * 5)")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--gating", choices=("exhaustive", "gated"), default="exhaustive")
    args = ap.parse_args(argv)

    spec = example_spec((float("inf"),) * 3 if args.gating == "exhaustive" else (1, 1, 1))
    theta = analyze(spec)[2].theta
    if sim.BACKEND != "compiled":
        raise SystemExit("compiled kernel unavailable; build it with `pip install -e . --no-build-isolation`")
    compiled = sim.run_kernel

    print(f"{'n':>3} {'events':>10} {'compiled s':>11} {'python s':>10} {'speedup':>8} identical")
    for n in args.n:
        horizon = theta**n * 5.0
        cfg = SimConfig(seed=args.seed, horizon=horizon, record_grid=np.linspace(0, horizon, 451))
        sim.run_kernel = compiled
        tc, a = timed(spec, cfg, args.repeat)
        sim.run_kernel = _kernel_py.run_kernel
        tp, b = timed(spec, cfg, args.repeat)
        sim.run_kernel = compiled
        print(f"{n:>3} {a.event_count:>10} {tc:>11.4f} {tp:>10.4f} {tp / tc:>8.1f} {same(a, b)}")


if __name__ == "__main__":
    main()
