"""Fluid limit of the scaled queue length process.

The limit is self-similar: on one period ``[1, theta)`` it is piecewise linear
with breakpoints ``bbar[0] = 1 < ... <= bbar[N] = theta`` and corner states
``abar[i]`` (the population when the server reaches queue i), and
``X(theta * t) == theta * X(t)`` extends it to all ``t > 0``.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .branching import OffspringMatrices, PerronEigenpair, build_matrices, perron
from .model import DerivedQuantities, NetworkSpec, derive

NEG_TOL = 1e-12


class FluidError(ValueError):
    pass


@dataclass(frozen=True)
class FluidSkeleton:
    alpha: float
    bbar: np.ndarray   # N+1 normalized breakpoints
    abar: np.ndarray   # (N+1, N) corner states
    theta: float
    b: np.ndarray      # unnormalized breakpoints, b[0] == alpha
    a: np.ndarray      # unnormalized corners, a[0] == v
    rates: np.ndarray  # (N, N): drift of the queue vector while Q_i is served

    @property
    def N(self) -> int:
        return self.rates.shape[0]


def drift_rates(spec: NetworkSpec) -> np.ndarray:
    """Row i: lambda + mu_i * p_i, with p_ii replaced by p_ii - 1."""
    mu = spec.mu
    R = spec.lam[None, :] + mu[:, None] * spec.P
    R[np.diag_indices(spec.N)] -= mu
    return R


def build_skeleton(
    dq: DerivedQuantities,
    om: OffspringMatrices,
    pe: PerronEigenpair,
    spec: NetworkSpec,
) -> FluidSkeleton:
    N = spec.N
    lam, P, mu, t = spec.lam, spec.P, dq.mu, dq.t
    v = pe.v
    alpha = float(v @ dq.cbar) / (dq.rho - 1.0)
    R = drift_rates(spec)

    bbar = np.empty(N + 1)
    abar = np.empty((N + 1, N))
    bbar[0] = 1.0
    abar[0] = v / alpha
    for i in range(N):
        routed_in = sum(P[j, i] * mu[j] * (bbar[j + 1] - bbar[j]) for j in range(i))
        bbar[i + 1] = bbar[i] + (v[i] / alpha + lam[i] * (bbar[i] - bbar[0]) + routed_in) * t[i]
        abar[i + 1] = abar[i] + R[i] * (bbar[i + 1] - bbar[i])

    # same recursion without the time normalization
    b = np.empty(N + 1)
    a = np.empty((N + 1, N))
    b[0] = alpha
    a[0] = v
    for i in range(N):
        routed_in = sum(P[j, i] * mu[j] * (b[j + 1] - b[j]) for j in range(i))
        b[i + 1] = b[i] + (v[i] + lam[i] * (b[i] - b[0]) + routed_in) * t[i]
        a[i + 1] = a[i] + R[i] * (b[i + 1] - b[i])

    if abar.min() < -NEG_TOL:
        i, j = np.unravel_index(np.argmin(abar), abar.shape)
        raise FluidError(f"negative fluid corner abar[{i}][{j}] = {abar[i, j]:.3g}")
    return FluidSkeleton(alpha=alpha, bbar=bbar, abar=abar, theta=pe.theta, b=b, a=a, rates=R)


def locate(sk: FluidSkeleton, t: float) -> tuple[int, int]:
    """Return (k, i) with theta**k * bbar[i] <= t < theta**k * bbar[i+1]; i is 0-based."""
    if not t > 0:
        raise ValueError(f"locate() needs t > 0, got {t}")
    theta = sk.theta
    k = math.floor(math.log(t) / math.log(theta))
    s = t / theta**k
    if s < 1.0:
        k -= 1
    elif s >= theta:
        k += 1
    s = t / theta**k
    i = bisect_right(sk.bbar, s) - 1
    return k, min(max(i, 0), sk.N - 1)


def evaluate(sk: FluidSkeleton, t: float) -> np.ndarray:
    if t < 0:
        raise ValueError(f"fluid trajectory is defined for t >= 0, got {t}")
    if t == 0:
        return np.zeros(sk.N)
    k, i = locate(sk, t)
    scale = sk.theta**k
    return scale * sk.abar[i] + (t - scale * sk.bbar[i]) * sk.rates[i]


def evaluate_many(sk: FluidSkeleton, ts: Iterable[float]) -> np.ndarray:
    """Vectorized :func:`evaluate` returning an array of shape (len(ts), N)."""
    ts = np.asarray(ts, dtype=float)
    out = np.zeros((ts.size, sk.N))
    pos = ts > 0
    if np.any(ts < 0):
        raise ValueError("fluid trajectory is defined for t >= 0")
    tp = ts[pos]
    if tp.size:
        theta = sk.theta
        k = np.floor(np.log(tp) / math.log(theta))
        s = tp / theta**k
        k = np.where(s < 1.0, k - 1, np.where(s >= theta, k + 1, k))
        scale = theta**k
        s = tp / scale
        i = np.clip(np.searchsorted(sk.bbar, s, side="right") - 1, 0, sk.N - 1)
        out[pos] = scale[:, None] * sk.abar[i] + (tp - scale * sk.bbar[i])[:, None] * sk.rates[i]
    return out


def total_slopes(sk: FluidSkeleton, spec: NetworkSpec) -> np.ndarray:
    """Growth rate of the total fluid population while each queue is served."""
    return spec.lam.sum() - spec.exit_prob * spec.mu


def beta(sk: FluidSkeleton) -> float:
    """Average growth rate: the beta with integral of beta*t over one period equal to the population integral."""
    totals = sk.abar.sum(axis=1)
    widths = np.diff(sk.bbar)
    area2 = float(np.sum((totals[:-1] + totals[1:]) * widths))
    return area2 / (sk.theta**2 - 1.0)


def sample_trajectory(sk: FluidSkeleton, xi: float, grid: Iterable[float]) -> np.ndarray:
    """Values of xi * X(t / xi) on ``grid`` (shape (len(grid), N))."""
    if not 1.0 <= xi < sk.theta:
        raise ValueError(f"xi must lie in [1, theta) = [1, {sk.theta}), got {xi}")
    grid = np.asarray(grid, dtype=float)
    return xi * evaluate_many(sk, grid / xi)


def analyze(spec: NetworkSpec):
    """Run the analytic pipeline; returns (derived, matrices, eigenpair, skeleton)."""
    dq = derive(spec)
    om = build_matrices(dq, spec)
    pe = perron(om.M)
    return dq, om, pe, build_skeleton(dq, om, pe, spec)
