"""Network specification, validation and closed-form derived quantities.

A cyclic polling network with N queues is described by external Poisson
arrival rates, per-queue service time distributions, a routing matrix
(customers leaving Q_i go to Q_j with probability ``P[i, j]`` or exit with
the remaining mass) and per-queue random gating indexes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

INF = math.inf

PMF_TOL = 1e-12


class ModelError(ValueError):
    """Raised when a network specification cannot be analysed."""


class SpecFormatError(ValueError):
    """Malformed spec document; the message starts with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class ServiceDistribution:
    kind: str
    params: Mapping[str, float]

    _KINDS = {
        "exponential": ("rate",),
        "deterministic": ("value",),
        "gamma": ("shape", "rate"),
    }

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown service distribution kind {self.kind!r}")
        expected = self._KINDS[self.kind]
        if set(self.params) != set(expected):
            raise ValueError(f"{self.kind} needs parameters {expected}, got {tuple(self.params)}")
        for name in expected:
            value = float(self.params[name])
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{self.kind} parameter {name} must be positive, got {value}")
        object.__setattr__(self, "params", {k: float(self.params[k]) for k in expected})

    @classmethod
    def exponential(cls, rate: float) -> "ServiceDistribution":
        return cls("exponential", {"rate": rate})

    @classmethod
    def deterministic(cls, value: float) -> "ServiceDistribution":
        return cls("deterministic", {"value": value})

    @classmethod
    def gamma(cls, shape: float, rate: float) -> "ServiceDistribution":
        return cls("gamma", {"shape": shape, "rate": rate})

    def mean(self) -> float:
        p = self.params
        if self.kind == "exponential":
            return 1.0 / p["rate"]
        if self.kind == "deterministic":
            return p["value"]
        return p["shape"] / p["rate"]

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = self.params
        if self.kind == "exponential":
            return rng.exponential(1.0 / p["rate"], size)
        if self.kind == "deterministic":
            return np.full(size, p["value"])
        return rng.gamma(p["shape"], 1.0 / p["rate"], size)


@dataclass(frozen=True)
class GatingIndexDistribution:
    """Distribution of the gating index over {1, 2, ...} and infinity.

    ``pmf`` maps positive integers (or ``math.inf``) to probabilities.
    """

    pmf: Mapping[float, float]

    def __post_init__(self):
        clean: dict[float, float] = {}
        for k, p in self.pmf.items():
            if k != INF and (int(k) != k or k < 1):
                raise ValueError(f"gating atoms must be positive integers or inf, got {k!r}")
            p = float(p)
            if p < 0 or not math.isfinite(p):
                raise ValueError(f"gating weight for atom {k} must be nonnegative, got {p}")
            key = INF if k == INF else int(k)
            clean[key] = clean.get(key, 0.0) + p
        total = sum(clean.values())
        if abs(total - 1.0) > PMF_TOL:
            raise ValueError(f"gating weights sum to {total!r}, not 1")
        if not any(p > 0 for p in clean.values()):
            raise ValueError("gating distribution has no positive atom")
        object.__setattr__(self, "pmf", dict(sorted(clean.items())))

    @classmethod
    def fixed(cls, k: float) -> "GatingIndexDistribution":
        return cls({k: 1.0})

    @classmethod
    def exhaustive(cls) -> "GatingIndexDistribution":
        return cls({INF: 1.0})

    @classmethod
    def gated(cls) -> "GatingIndexDistribution":
        return cls({1: 1.0})

    @property
    def is_exhaustive(self) -> bool:
        return self.pmf.get(INF, 0.0) == 1.0

    def expect_power(self, x: float) -> float:
        """E[x ** kappa]; the infinite atom contributes 0 (requires 0 <= x < 1)."""
        return sum(p * x**k for k, p in self.pmf.items() if k != INF and p > 0)

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Atoms as int64 codes (0 encodes infinity) and their probabilities."""
        ks = np.array([0 if k == INF else k for k in self.pmf], dtype=np.int64)
        ps = np.array(list(self.pmf.values()), dtype=float)
        return ks, ps / ps.sum()


@dataclass(frozen=True)
class NetworkSpec:
    lam: np.ndarray
    service: tuple[ServiceDistribution, ...]
    P: np.ndarray
    gating: tuple[GatingIndexDistribution, ...]

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float).reshape(-1)
        P = np.asarray(self.P, dtype=float)
        n = lam.size
        if P.shape != (n, n):
            raise ValueError(f"routing matrix must be {n}x{n}, got shape {P.shape}")
        if len(self.service) != n or len(self.gating) != n:
            raise ValueError("service and gating need one entry per queue")
        lam.setflags(write=False)
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "service", tuple(self.service))
        object.__setattr__(self, "gating", tuple(self.gating))

    @property
    def N(self) -> int:
        return self.lam.size

    @property
    def mu(self) -> np.ndarray:
        return np.array([1.0 / s.mean() for s in self.service])

    @property
    def exit_prob(self) -> np.ndarray:
        return 1.0 - self.P.sum(axis=1)

    def with_gating(self, kappa: Sequence[float]) -> "NetworkSpec":
        """Copy of the spec with deterministic gating index ``kappa[i]`` at each queue."""
        return replace(self, gating=tuple(GatingIndexDistribution.fixed(k) for k in kappa))


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_for_errors(self) -> None:
        if self.errors:
            raise ModelError("; ".join(self.errors))


@dataclass(frozen=True)
class DerivedQuantities:
    gamma: np.ndarray      # total arrival rates
    cbar: np.ndarray       # mean total service requirement of an external arrival
    rho_gamma: np.ndarray  # gamma_i / mu_i
    rho_lc: np.ndarray     # lambda_i * cbar_i
    rho: float
    bE: np.ndarray         # mean total service per sojourn at Q_i
    phi: np.ndarray
    f: np.ndarray          # exhaustiveness
    t: np.ndarray          # mean visit time started by one customer
    mu: np.ndarray


def _spectral_radius(P: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(P)))) if P.size else 0.0


def validate(spec: NetworkSpec, require_overload: bool = True) -> ValidationReport:
    """Check a spec.  The analysis needs rho > 1; simulation only needs finite visits."""
    rep = ValidationReport()
    N, lam, P = spec.N, spec.lam, spec.P
    if N < 2:
        rep.errors.append(f"need at least 2 queues, got {N}")
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        rep.errors.append("arrival rates must be positive")
    if np.any(P < 0):
        rep.errors.append("routing probabilities must be nonnegative")
    exit_p = spec.exit_prob
    if np.any(exit_p < -1e-12):
        rows = [i + 1 for i in np.flatnonzero(exit_p < -1e-12)]
        rep.errors.append(f"routing rows {rows} sum to more than 1")
    if exit_p.clip(min=0).sum() <= 0:
        rep.errors.append("no exit probability: every routing row sums to 1")
    if rep.errors:
        return rep
    if _spectral_radius(P) >= 1 - 1e-12:
        rep.errors.append("routing matrix not substochastic-convergent")
        return rep

    mu = spec.mu
    pii = np.diag(P)
    visit_load = lam / (mu * (1 - pii))
    for i in np.flatnonzero(visit_load >= 1):
        rep.errors.append(
            f"queue {i + 1}: lambda/(mu(1-p_ii)) = {visit_load[i]:.6g} >= 1, visit times are infinite"
        )
    gamma = np.linalg.solve(np.eye(N) - P.T, lam)
    cbar = np.linalg.solve(np.eye(N) - P, 1.0 / mu)
    rho = float(lam @ cbar)
    if require_overload and rho <= 1:
        rep.errors.append(f"not overloaded: rho = {rho:.6g} <= 1")
    for i in np.flatnonzero(gamma / mu >= 1):
        rep.warnings.append(f"queue {i + 1}: gamma/mu = {gamma[i] / mu[i]:.6g} >= 1")
    return rep


def derive(spec: NetworkSpec) -> DerivedQuantities:
    validate(spec).raise_for_errors()
    N, lam, P = spec.N, spec.lam, spec.P
    mu = spec.mu
    # LAPACK gesv: LU with partial pivoting
    gamma = np.linalg.solve(np.eye(N) - P.T, lam)
    cbar = np.linalg.solve(np.eye(N) - P, 1.0 / mu)
    pii = np.diag(P)
    bE = 1.0 / (mu * (1.0 - pii))
    phi = bE / (1.0 - lam * bE)
    x = lam / mu + pii
    f = np.array([1.0 - g.expect_power(xi) for g, xi in zip(spec.gating, x)])
    t = f / (mu * (1.0 - x))
    return DerivedQuantities(
        gamma=gamma,
        cbar=cbar,
        rho_gamma=gamma / mu,
        rho_lc=lam * cbar,
        rho=float(lam @ cbar),
        bE=bE,
        phi=phi,
        f=f,
        t=t,
        mu=mu,
    )


def mean_visit_time_k(spec: NetworkSpec, i: int, k: float) -> float:
    """Mean duration of a k-gated visit to queue ``i`` (0-based) started by one customer."""
    if k != INF and (k < 0 or int(k) != k):
        raise ValueError(f"k must be a nonnegative integer or inf, got {k!r}")
    mu = 1.0 / spec.service[i].mean()
    x = spec.lam[i] / mu + spec.P[i, i]
    if not 0 <= x < 1:
        raise ModelError(f"queue {i + 1}: lambda/mu + p_ii = {x} is not below 1")
    power = 0.0 if k == INF else x ** int(k)
    return (1.0 - power) / (mu * (1.0 - x))


# ---------------------------------------------------------------- JSON I/O


def _number(value: Any, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SpecFormatError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise SpecFormatError(path, "must be finite")
    if positive and value <= 0:
        raise SpecFormatError(path, f"must be positive, got {value}")
    return value


def _array(doc: Mapping, key: str, n: int | None) -> list:
    if key not in doc:
        raise SpecFormatError(key, "missing field")
    value = doc[key]
    if not isinstance(value, list):
        raise SpecFormatError(key, "expected an array")
    if n is not None and len(value) != n:
        raise SpecFormatError(key, f"expected {n} entries, got {len(value)}")
    return value


def spec_from_dict(doc: Mapping[str, Any]) -> NetworkSpec:
    """Build a :class:`NetworkSpec` from the JSON document layout used by the CLI."""
    if not isinstance(doc, Mapping):
        raise SpecFormatError("$", "spec document must be an object")
    if "n" not in doc:
        raise SpecFormatError("n", "missing field")
    n = doc["n"]
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise SpecFormatError("n", f"expected a positive integer, got {n!r}")

    lam = [_number(v, f"lambda[{i}]") for i, v in enumerate(_array(doc, "lambda", n))]

    service = []
    for i, entry in enumerate(_array(doc, "service", n)):
        path = f"service[{i}]"
        if not isinstance(entry, Mapping):
            raise SpecFormatError(path, "expected an object with kind and params")
        kind = entry.get("kind")
        params = entry.get("params")
        if kind not in ServiceDistribution._KINDS:
            raise SpecFormatError(f"{path}.kind", f"unknown kind {kind!r}")
        if not isinstance(params, Mapping):
            raise SpecFormatError(f"{path}.params", "expected an object")
        for name in ServiceDistribution._KINDS[kind]:
            if name not in params:
                raise SpecFormatError(f"{path}.params.{name}", "missing field")
            _number(params[name], f"{path}.params.{name}", positive=True)
        extra = set(params) - set(ServiceDistribution._KINDS[kind])
        if extra:
            raise SpecFormatError(f"{path}.params", f"unexpected fields {sorted(extra)}")
        service.append(ServiceDistribution(kind, dict(params)))

    rows = _array(doc, "routing", n)
    P = np.zeros((n, n))
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != n:
            raise SpecFormatError(f"routing[{i}]", f"expected an array of {n} numbers")
        for j, v in enumerate(row):
            P[i, j] = _number(v, f"routing[{i}][{j}]")

    gating = []
    for i, entry in enumerate(_array(doc, "gating", n)):
        path = f"gating[{i}]"
        if not isinstance(entry, Mapping) or not isinstance(entry.get("pmf"), list):
            raise SpecFormatError(f"{path}.pmf", "expected an array of {k, p} atoms")
        pmf: dict[float, float] = {}
        for a, atom in enumerate(entry["pmf"]):
            apath = f"{path}.pmf[{a}]"
            if not isinstance(atom, Mapping) or "k" not in atom or "p" not in atom:
                raise SpecFormatError(apath, "expected an object with k and p")
            k = atom["k"]
            if k == "inf":
                key = INF
            elif isinstance(k, int) and not isinstance(k, bool) and k >= 1:
                key = k
            else:
                raise SpecFormatError(f"{apath}.k", f"expected a positive integer or \"inf\", got {k!r}")
            pmf[key] = pmf.get(key, 0.0) + _number(atom["p"], f"{apath}.p")
        try:
            gating.append(GatingIndexDistribution(pmf))
        except ValueError as exc:
            raise SpecFormatError(f"{path}.pmf", str(exc)) from None

    return NetworkSpec(lam=np.array(lam), service=tuple(service), P=P, gating=tuple(gating))


def spec_to_dict(spec: NetworkSpec) -> dict[str, Any]:
    return {
        "n": spec.N,
        "lambda": [float(x) for x in spec.lam],
        "service": [{"kind": s.kind, "params": dict(s.params)} for s in spec.service],
        "routing": [[float(x) for x in row] for row in spec.P],
        "gating": [
            {"pmf": [{"k": "inf" if k == INF else int(k), "p": float(p)} for k, p in g.pmf.items()]}
            for g in spec.gating
        ],
    }


def example_spec(gating: Sequence[float] = (INF, INF, INF)) -> NetworkSpec:
    """Three-queue example network with exponential service (rates 8, 5, 2)."""
    P = np.array([[0.1, 0.25, 0.2], [0.2, 0.1, 0.2], [0.2, 0.1, 0.25]])
    return NetworkSpec(
        lam=np.array([1.0, 1.0, 1.0]),
        service=tuple(ServiceDistribution.exponential(r) for r in (8.0, 5.0, 2.0)),
        P=P,
        gating=tuple(GatingIndexDistribution.fixed(k) for k in gating),
    )
