"""Stochastic simulation of the polling network.

The event loop lives in a compiled kernel when it could be built and in a
pure-Python kernel otherwise; set ``POLLFLUID_BACKEND=python`` to force the
latter.  Both consume the same random streams and produce identical traces.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from ..fluid import FluidSkeleton, evaluate_many
from ..model import NetworkSpec, validate
from . import _kernel_py
from ._streams import Streams

if os.environ.get("POLLFLUID_BACKEND", "").lower() == "python":
    run_kernel = _kernel_py.run_kernel
    BACKEND = "python"
else:
    try:
        from ._ckernel import run_kernel
        BACKEND = "compiled"
    except ImportError:
        run_kernel = _kernel_py.run_kernel
        BACKEND = "python"

STOPPED, HORIZON, EVENT_CAP = _kernel_py.STOPPED, _kernel_py.HORIZON, _kernel_py.EVENT_CAP
DEFAULT_EVENT_CAP = 10**8


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    seed: int
    horizon: float | None = None
    scale_n: int | None = None
    window: float = 1.0
    record_grid: Sequence[float] = ()
    replication_id: int = 0
    event_cap: int = DEFAULT_EVENT_CAP

    def resolve_horizon(self, theta: float | None = None) -> float:
        if self.horizon is not None:
            h = float(self.horizon)
        elif self.scale_n is not None:
            if theta is None:
                raise ValueError("scale_n needs theta to fix the horizon")
            h = theta**self.scale_n * self.window
        else:
            raise ValueError("SimConfig needs either horizon or scale_n")
        if not h > 0:
            raise ValueError(f"horizon must be positive, got {h}")
        grid = np.asarray(self.record_grid, dtype=float)
        if grid.size and (grid.min() < 0 or grid.max() > h):
            raise ValueError("record_grid times must lie within [0, horizon]")
        return h

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=(self.replication_id,))


@dataclass
class _Recorder:
    N: int
    cycle_t: list = field(default_factory=list)
    cycle_X: list = field(default_factory=list)
    visit_t: list = None
    visit_X: list = None

    def __post_init__(self):
        self.visit_t = [[] for _ in range(self.N)]
        self.visit_X = [[] for _ in range(self.N)]


@dataclass(frozen=True)
class SimTrace:
    horizon: float
    cycle_instants: np.ndarray       # t^(n), n = 1, 2, ...
    cycle_states: np.ndarray         # X(t^(n))
    visit_instants: tuple            # per queue, t_i^(n)
    visit_states: tuple              # per queue, X(t_i^(n))
    grid: np.ndarray
    queue_path: np.ndarray           # (G, N) queue lengths at grid times
    occupation: np.ndarray           # (G, N) cumulative server time per queue
    event_count: int
    final_state: np.ndarray

    @property
    def N(self) -> int:
        return self.final_state.size

    @property
    def nu(self) -> int:
        """1-based index of the last cycle that started with an empty system (0 if none)."""
        empty = np.flatnonzero(self.cycle_states.sum(axis=1) == 0)
        return int(empty[-1]) + 1 if empty.size else 0

    def eta(self, n: int, theta: float) -> int:
        """First cycle index k (1-based) with t^(k) >= theta**n; 0 for n < 0."""
        if n < 0:
            return 0
        idx = np.flatnonzero(self.cycle_instants >= theta**n)
        if not idx.size:
            raise SimulationError(f"no cycle reached theta**{n} within the horizon")
        return int(idx[0]) + 1

    def totals(self) -> np.ndarray:
        return self.queue_path.sum(axis=1)


@dataclass(frozen=True)
class ScaledTrace:
    n: int
    theta: float
    grid: np.ndarray
    values: np.ndarray  # (G, N)


def run(spec: NetworkSpec, cfg: SimConfig, theta: float | None = None) -> SimTrace:
    """Simulate from an empty system at time 0 up to the configured horizon."""
    validate(spec, require_overload=False).raise_for_errors()
    horizon = cfg.resolve_horizon(theta)
    N = spec.N
    grid = np.ascontiguousarray(np.sort(np.asarray(cfg.record_grid, dtype=float)))
    streams = Streams(spec, cfg.seed_sequence())
    X = np.zeros(N, dtype=np.int64)
    next_arr = _first_arrivals(streams, 0.0)
    occ = np.zeros(N)
    grid_X = np.zeros((grid.size, N), dtype=np.int64)
    grid_occ = np.zeros((grid.size, N))
    rec = _Recorder(N)
    clock, pos, gp, events, visits, status = run_kernel(
        X, next_arr, occ, 0.0, 0, -1, horizon, True,
        grid, grid_X, grid_occ, 0, streams, cfg.event_cap, 0, rec,
    )
    if status == EVENT_CAP:
        raise SimulationError(f"horizon too large: more than {cfg.event_cap} events before t = {horizon}")
    return SimTrace(
        horizon=horizon,
        cycle_instants=np.array(rec.cycle_t),
        cycle_states=np.array(rec.cycle_X, dtype=np.int64).reshape(-1, N),
        visit_instants=tuple(np.array(v) for v in rec.visit_t),
        visit_states=tuple(np.array(v, dtype=np.int64).reshape(-1, N) for v in rec.visit_X),
        grid=grid,
        queue_path=grid_X,
        occupation=grid_occ,
        event_count=int(events),
        final_state=X,
    )


def _first_arrivals(streams: Streams, clock: float) -> np.ndarray:
    nxt = np.empty(streams.spec.N)
    for j in range(streams.spec.N):
        p = streams.pos[0, j]
        if p == streams.block:
            streams.refill(0, j)
            p = 0
        nxt[j] = clock + streams.gaps[j, p]
        streams.pos[0, j] = p + 1
    return nxt


_NO_GRID = np.zeros(0)
_NO_GRID_X = np.zeros((0, 1), dtype=np.int64)
_NO_GRID_OCC = np.zeros((0, 1))


def _short_run(streams: Streams, X: np.ndarray, start_queue: int, visits: int):
    """Run ``visits`` visits starting at ``start_queue`` at time 0; returns (duration, final X)."""
    next_arr = _first_arrivals(streams, 0.0)
    occ = np.zeros(X.size)
    clock, *_ = run_kernel(
        X, next_arr, occ, 0.0, start_queue, visits, math.inf, False,
        _NO_GRID, _NO_GRID_X, _NO_GRID_OCC, 0, streams, DEFAULT_EVENT_CAP, 0, None,
    )
    return clock, X


def _check_queue(spec: NetworkSpec, i: int) -> None:
    if not 0 <= i < spec.N:
        raise IndexError(f"queue index {i} out of range for {spec.N} queues")


def session_offspring_samples(spec: NetworkSpec, i: int, reps: int, seed) -> np.ndarray:
    """``reps`` draws of the population one full cycle after a lone customer at Q_i.

    The server starts right before Q_1 at time 0; returns an array (reps, N).
    """
    validate(spec, require_overload=False).raise_for_errors()
    _check_queue(spec, i)
    streams = Streams(spec, seed)
    out = np.empty((reps, spec.N), dtype=np.int64)
    for r in range(reps):
        X = np.zeros(spec.N, dtype=np.int64)
        X[i] = 1
        _short_run(streams, X, 0, spec.N)
        out[r] = X
    return out


def session_offspring_sample(spec: NetworkSpec, i: int, rng) -> np.ndarray:
    return session_offspring_samples(spec, i, 1, rng)[0]


def visit_samples(spec: NetworkSpec, i: int, reps: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Single visits to Q_i started by one customer: (durations, populations at visit end)."""
    validate(spec, require_overload=False).raise_for_errors()
    _check_queue(spec, i)
    streams = Streams(spec, seed)
    durations = np.empty(reps)
    states = np.empty((reps, spec.N), dtype=np.int64)
    for r in range(reps):
        X = np.zeros(spec.N, dtype=np.int64)
        X[i] = 1
        durations[r], _ = _short_run(streams, X, i, 1)
        states[r] = X
    return durations, states


def visit_time_mc(spec: NetworkSpec, i: int, reps: int, seed) -> tuple[float, float]:
    """Sample mean of the visit duration at Q_i and its 95% half-width."""
    d, _ = visit_samples(spec, i, reps, seed)
    return float(d.mean()), float(1.96 * d.std(ddof=1) / math.sqrt(reps))


def session_sampler(spec: NetworkSpec):
    """Offspring sampler factory for :func:`pollfluid.branching.estimate_extinction`.

    One generation runs a full cycle of the real network from the current
    population.  By the branching property this has the law of a sum of
    independent session offspring, one per customer.
    """
    validate(spec, require_overload=False).raise_for_errors()

    def factory(rng: np.random.Generator):
        streams = Streams(spec, rng)

        def step(pop: np.ndarray) -> np.ndarray:
            X = np.array(pop, dtype=np.int64)
            if X.sum() == 0:
                return X
            _short_run(streams, X, 0, spec.N)
            return X

        return step

    return factory


# ---------------------------------------------------------------- scaling


def scaled(trace: SimTrace, theta: float, n: int, grid: Sequence[float]) -> ScaledTrace:
    """X(theta**n t) / theta**n on ``grid``; the raw times must be recorded grid points."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    scale = theta**n
    raw = grid * scale
    if raw.max() > trace.horizon * (1 + 1e-12):
        raise SimulationError(f"insufficient horizon: need {raw.max()}, trace ends at {trace.horizon}")
    idx = np.searchsorted(trace.grid, raw)
    idx_lo = np.clip(idx - 1, 0, trace.grid.size - 1)
    idx_hi = np.clip(idx, 0, trace.grid.size - 1)
    pick = np.where(np.abs(trace.grid[idx_hi] - raw) <= np.abs(trace.grid[idx_lo] - raw), idx_hi, idx_lo)
    if trace.grid.size == 0 or np.any(np.abs(trace.grid[pick] - raw) > 1e-9 * np.maximum(1.0, raw)):
        raise SimulationError("requested times were not recorded; record on theta**n * grid")
    return ScaledTrace(n=n, theta=theta, grid=grid, values=trace.queue_path[pick] / scale)


def simulate_scaled(spec: NetworkSpec, theta: float, n: int, grid: Sequence[float], seed: int,
                    replication_id: int = 0, event_cap: int = DEFAULT_EVENT_CAP):
    """Run once with a horizon of theta**n * max(grid) and return (trace, scaled trace)."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    scale = theta**n
    cfg = SimConfig(seed=seed, horizon=scale * grid.max(), record_grid=grid * scale,
                    replication_id=replication_id, event_cap=event_cap)
    trace = run(spec, cfg)
    return trace, scaled(trace, theta, n, grid)


# ---------------------------------------------------------------- xi fit


def fit_distance(values: np.ndarray, grid: np.ndarray, sk: FluidSkeleton, xi: float) -> float:
    """Relative sup-distance between a scaled path and xi * X(t / xi).

    Sum over queues of the sup-norm error, divided by the sum over queues of
    the sup-norm of the fluid path.
    """
    fluid = xi * evaluate_many(sk, grid / xi)
    err = np.abs(values - fluid).max(axis=0).sum()
    return float(err / np.abs(fluid).max(axis=0).sum())


def estimate_xi(st: ScaledTrace, sk: FluidSkeleton, window: tuple[float, float] | None = None):
    """Fit the random time scale: returns (xi_hat in [1, theta), fit distance)."""
    grid, values = st.grid, st.values
    if window is not None:
        keep = (grid >= window[0]) & (grid <= window[1])
        grid, values = grid[keep], values[keep]
    if grid.size == 0 or grid.min() <= 0:
        raise ValueError("xi fit needs a grid inside (0, inf)")
    if not np.any(values):
        raise SimulationError("trace too short: scaled path is identically zero")
    theta = sk.theta
    step = 1e-3 * (theta - 1.0)
    cand = 1.0 + step * np.arange(1000)
    dist = np.array([fit_distance(values, grid, sk, x) for x in cand])
    k = int(np.argmin(dist))

    # xi and theta * xi describe the same curve, so the search is periodic in log xi
    def objective(x):
        x = x / theta if x >= theta else (x * theta if x < 1.0 else x)
        return fit_distance(values, grid, sk, x)

    res = minimize_scalar(objective, bounds=(cand[k] - step, cand[k] + step), method="bounded",
                          options={"xatol": 1e-9})
    best, best_d = cand[k], dist[k]
    if res.fun < best_d:
        best, best_d = float(res.x), float(res.fun)
        if best >= theta:
            best /= theta
        elif best < 1.0:
            best *= theta
    if not 1.0 <= best < theta:
        best = 1.0
    return float(best), float(best_d)
