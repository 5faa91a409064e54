"""Mean offspring matrices of the embedded branching process, Perron pair, extinction."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import DerivedQuantities, NetworkSpec, validate


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class OffspringMatrices:
    Mk: tuple[np.ndarray, ...]  # per-visit mean replacement matrices
    M: np.ndarray               # Mk[0] @ Mk[1] @ ... @ Mk[N-1]
    mcheck: np.ndarray          # visit offspring means, row i = row i of Mk[i]
    msession: np.ndarray        # session offspring means


@dataclass(frozen=True)
class PerronEigenpair:
    theta: float
    v: np.ndarray  # left eigenvector
    u: np.ndarray  # right eigenvector, v @ u == 1


def visit_matrix(spec: NetworkSpec, dq: DerivedQuantities, k: int) -> np.ndarray:
    N = spec.N
    Mk = np.eye(N)
    Mk[k] = dq.f[k] * dq.phi[k] * (dq.mu[k] * spec.P[k] + spec.lam)
    Mk[k, k] = 1.0 - dq.f[k]
    return Mk


def build_matrices(dq: DerivedQuantities, spec: NetworkSpec) -> OffspringMatrices:
    N = spec.N
    Mk = tuple(visit_matrix(spec, dq, k) for k in range(N))
    M = np.eye(N)
    for m in Mk:
        M = M @ m
    mcheck = np.array([Mk[i][i] for i in range(N)])

    # A customer at Q_i at the start of a cycle is untouched by earlier visits;
    # its visit offspring at queues after i are served again later in the cycle.
    msession = np.zeros((N, N))
    msession[N - 1] = mcheck[N - 1]
    for i in range(N - 2, -1, -1):
        row = np.where(np.arange(N) <= i, mcheck[i], 0.0)
        for k in range(i + 1, N):
            row = row + mcheck[i, k] * msession[k]
        msession[i] = row
    return OffspringMatrices(Mk=Mk, M=M, mcheck=mcheck, msession=msession)


def _dominant(A: np.ndarray, tol: float, max_iter: int) -> tuple[float, np.ndarray]:
    x = np.ones(A.shape[0])
    rq_old = math.nan
    for _ in range(max_iter):
        y = A @ x
        top = y.max()
        if not top > 0:
            raise ConvergenceError("power iteration collapsed to the zero vector")
        rq = float(x @ y) / float(x @ x)
        y = y / top
        if abs(rq - rq_old) < tol and np.max(np.abs(y - x)) < 1e-10:
            return rq, y
        x, rq_old = y, rq
    raise ConvergenceError(f"no convergence after {max_iter} power iterations")


def perron(M: np.ndarray, tol: float = 1e-12, max_iter: int = 10**6) -> PerronEigenpair:
    """Dominant eigenvalue of a nonnegative matrix with left/right eigenvectors.

    ``v`` is scaled to unit max-entry, then ``u`` is scaled so that ``v @ u == 1``.
    """
    M = np.asarray(M, dtype=float)
    if np.any(M < 0):
        raise ValueError("perron() needs a nonnegative matrix")
    theta_r, u = _dominant(M, tol, max_iter)
    theta_l, v = _dominant(M.T, tol, max_iter)
    if abs(theta_r - theta_l) > 1e-9 * max(1.0, abs(theta_r)):
        raise ConvergenceError(f"left/right iterations disagree: {theta_l} vs {theta_r}")
    v = np.clip(v, 0.0, None)
    u = np.clip(u, 0.0, None)
    v = v / v.max()
    u = u / (v @ u)
    return PerronEigenpair(theta=theta_r, v=v, u=u)


def immigration_weights(spec: NetworkSpec) -> np.ndarray:
    """Probability that the first customer after an empty cycle arrives at each queue."""
    validate(spec).raise_for_errors()
    return spec.lam / spec.lam.sum()


# ---------------------------------------------------------------- extinction

# A sampler factory receives a replication's Generator and returns a function
# mapping a population vector to the next generation.
SamplerFactory = Callable[[np.random.Generator], Callable[[np.ndarray], np.ndarray]]


def per_individual(draw: Callable[[int, np.random.Generator], np.ndarray]) -> SamplerFactory:
    """Turn a single-individual offspring draw ``draw(type, rng)`` into a sampler factory."""

    def factory(rng: np.random.Generator):
        def step(pop: np.ndarray) -> np.ndarray:
            nxt = np.zeros_like(pop)
            for i, count in enumerate(pop):
                for _ in range(int(count)):
                    nxt += draw(i, rng)
            return nxt

        return step

    return factory


@dataclass(frozen=True)
class ExtinctionEstimate:
    qhat: float
    half_width: float
    std_error: float
    extinct: int
    survived: int
    inconclusive: int

    @property
    def reps(self) -> int:
        return self.extinct + self.survived + self.inconclusive


def estimate_extinction(
    sampler: SamplerFactory,
    i: int,
    N: int,
    generations: int = 50,
    truncation: int = 10**5,
    reps: int = 2000,
    seed: int = 0,
) -> ExtinctionEstimate:
    """Monte Carlo extinction probability of the branching process started from one type-``i`` individual.

    Replication ``r`` uses the stream ``SeedSequence(seed, spawn_key=(r,))``.
    A run counts as surviving once its total population exceeds ``truncation``;
    runs hitting neither bound within ``generations`` are inconclusive and are
    left out of the estimate.
    """
    extinct = survived = inconclusive = 0
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        step = sampler(rng)
        pop = np.zeros(N, dtype=np.int64)
        pop[i] = 1
        outcome = None
        for _ in range(generations):
            pop = np.asarray(step(pop), dtype=np.int64)
            total = int(pop.sum())
            if total == 0:
                outcome = "extinct"
                break
            if total > truncation:
                outcome = "survived"
                break
        if outcome == "extinct":
            extinct += 1
        elif outcome == "survived":
            survived += 1
        else:
            inconclusive += 1
    decided = extinct + survived
    if decided == 0:
        return ExtinctionEstimate(math.nan, math.nan, math.nan, 0, 0, inconclusive)
    q = extinct / decided
    se = math.sqrt(q * (1 - q) / decided)
    return ExtinctionEstimate(q, 1.96 * se, se, extinct, survived, inconclusive)
