"""Choice of deterministic gating indexes minimizing the fluid growth rate beta."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .branching import build_matrices, perron
from .fluid import beta, build_skeleton
from .model import INF, DerivedQuantities, NetworkSpec, derive

MAX_COMBINATIONS = 10**6
# an index k with x**k below this is treated as exhaustive (x = lambda/mu + p_ii)
EXHAUSTIVE_TOL = 1e-12


class SearchSpaceError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizationResult:
    best: tuple
    best_beta: float
    history: list = field(default_factory=list)  # (iteration, best-so-far beta)
    evaluations: int = 0


def _order_key(kappa: Sequence[float]) -> tuple:
    # infinity sorts after every integer
    return tuple((1, 0) if k == INF else (0, int(k)) for k in kappa)


def beta_of_derived(spec: NetworkSpec, dq: DerivedQuantities) -> float:
    om = build_matrices(dq, spec)
    pe = perron(om.M)
    return beta(build_skeleton(dq, om, pe, spec))


def evaluate(spec: NetworkSpec, kappa: Sequence[float]) -> float:
    """Fluid average growth rate with deterministic gating index ``kappa[i]`` at queue i."""
    return beta_of_derived(spec, derive(spec.with_gating(kappa)))


def evaluate_f(spec: NetworkSpec, f: Sequence[float]) -> float:
    """Growth rate as a function of the exhaustiveness vector directly (0 < f_i <= 1)."""
    f = np.asarray(f, dtype=float)
    if f.shape != (spec.N,) or np.any(f <= 0) or np.any(f > 1):
        raise ValueError("exhaustiveness values must lie in (0, 1]")
    dq = derive(spec)
    return beta_of_derived(spec, replace(dq, f=f, t=f * dq.phi))


def canonical(spec: NetworkSpec, kappa: Sequence[float]) -> tuple:
    """Replace indexes that are numerically exhaustive by infinity.

    A k-gated visit differs from an exhaustive one only through x**k; once that
    is below ``EXHAUSTIVE_TOL`` the two give the same beta up to roundoff, and
    the roundoff must not decide the winner of a search.
    """
    x = spec.lam / spec.mu + np.diag(spec.P)
    return tuple(INF if k == INF or x[i] ** int(k) < EXHAUSTIVE_TOL else int(k) for i, k in enumerate(kappa))


class _Evaluator:
    """Memoized beta over canonical assignments."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.cache: dict[tuple, float] = {}
        self.calls = 0

    def __call__(self, kappa: Sequence[float]) -> float:
        self.calls += 1
        key = canonical(self.spec, kappa)
        if key not in self.cache:
            self.cache[key] = evaluate(self.spec, key)
        return self.cache[key]


def _better(b1: float, k1: tuple, b2: float, k2: tuple) -> bool:
    return b1 < b2 or (b1 == b2 and _order_key(k1) < _order_key(k2))


def exhaustive_search(spec: NetworkSpec, candidates: Sequence[Sequence[float]]) -> OptimizationResult:
    """Evaluate every assignment in the product of the per-queue candidate sets.

    Assignments are compared in canonical form; ties go to the
    lexicographically smallest canonical assignment.
    """
    if len(candidates) != spec.N:
        raise ValueError(f"need one candidate set per queue ({spec.N})")
    size = math.prod(len(c) for c in candidates)
    if size > MAX_COMBINATIONS:
        raise SearchSpaceError(f"{size} assignments exceed the cap of {MAX_COMBINATIONS}")
    ev = _Evaluator(spec)
    best_k, best_b = None, math.inf
    history = []
    for it, kappa in enumerate(itertools.product(*candidates)):
        b = ev(kappa)
        key = canonical(spec, kappa)
        if best_k is None or _better(b, key, best_b, best_k):
            best_k, best_b = key, b
        history.append((it, best_b))
    return OptimizationResult(best=best_k, best_beta=best_b, history=history, evaluations=len(ev.cache))


@dataclass(frozen=True)
class GAParams:
    population: int = 20
    generations: int = 100
    mutation: float = 0.1
    crossover: float = 0.8
    seed: int = 0


def genetic_search(spec: NetworkSpec, candidates: Sequence[Sequence[float]],
                   params: GAParams = GAParams(), initial: Sequence[Sequence[float]] | None = None,
                   ) -> OptimizationResult:
    """Seeded genetic algorithm over candidate indexes.

    Binary tournament selection, uniform crossover, per-gene mutation to a
    uniformly drawn candidate, one elite carried over unchanged.
    """
    N = spec.N
    if len(candidates) != N:
        raise ValueError(f"need one candidate set per queue ({N})")
    rng = np.random.default_rng(params.seed)
    ev = _Evaluator(spec)
    sizes = [len(c) for c in candidates]

    def decode(genes) -> tuple:
        return tuple(candidates[i][g] for i, g in enumerate(genes))

    if initial is not None:
        index = [{_order_key([k]): n for n, k in enumerate(c)} for c in candidates]
        pop = np.array([[index[i][_order_key([k])] for i, k in enumerate(ind)] for ind in initial])
    else:
        pop = np.column_stack([rng.integers(0, s, params.population) for s in sizes])
    P = pop.shape[0]

    def score(pop):
        return np.array([ev(decode(g)) for g in pop])

    fit = score(pop)

    def best_of(pop, fit):
        k = min(range(P), key=lambda r: (fit[r], _order_key(canonical(spec, decode(pop[r])))))
        return pop[k].copy(), fit[k]

    elite, elite_fit = best_of(pop, fit)
    history = [(0, float(elite_fit))]
    for gen in range(1, params.generations + 1):
        children = [elite]
        while len(children) < P:
            a, b = rng.integers(0, P, 2), rng.integers(0, P, 2)
            pa = pop[a[0]] if fit[a[0]] <= fit[a[1]] else pop[a[1]]
            pb = pop[b[0]] if fit[b[0]] <= fit[b[1]] else pop[b[1]]
            if rng.random() < params.crossover:
                mask = rng.random(N) < 0.5
                child = np.where(mask, pa, pb)
            else:
                child = pa.copy()
            mutate = rng.random(N) < params.mutation
            for i in np.flatnonzero(mutate):
                child[i] = rng.integers(0, sizes[i])
            children.append(child)
        pop = np.array(children)
        fit = score(pop)
        cand, cand_fit = best_of(pop, fit)
        if _better(cand_fit, canonical(spec, decode(cand)), elite_fit, canonical(spec, decode(elite))):
            elite, elite_fit = cand, cand_fit
        history.append((gen, float(elite_fit)))
    return OptimizationResult(best=canonical(spec, decode(elite)), best_beta=float(elite_fit),
                              history=history, evaluations=len(ev.cache))


def default_candidates(N: int, kmax: int = 32) -> list[list[float]]:
    return [list(range(1, kmax + 1)) + [INF] for _ in range(N)]
