"""Block-buffered random inputs shared by both simulation kernels.

Every (purpose, queue) pair owns an independent child generator and a row in a
preallocated buffer.  A kernel consumes a row front to back and calls
``refill`` when it runs out, so both kernels see exactly the same numbers.
"""
from __future__ import annotations

import numpy as np

from ..model import NetworkSpec

GAPS, SERVICE, ROUTE, GATING = range(4)


class Streams:
    def __init__(self, spec: NetworkSpec, seed, block: int = 1024):
        if isinstance(seed, np.random.Generator):
            children = seed.spawn(4 * spec.N)
        else:
            ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
            children = [np.random.default_rng(s) for s in ss.spawn(4 * spec.N)]
        N = spec.N
        self.spec = spec
        self.block = block
        self._rngs = [children[k * N:(k + 1) * N] for k in range(4)]
        self._scale = 1.0 / spec.lam
        exit_p = np.clip(spec.exit_prob, 0.0, None)
        probs = np.column_stack([spec.P, exit_p])
        self._route_p = probs / probs.sum(axis=1, keepdims=True)
        self._gating = [g.atoms() for g in spec.gating]

        self.gaps = np.empty((N, block))
        self.service = np.empty((N, block))
        self.route = np.empty((N, block), dtype=np.int64)  # N means "leaves the network"
        self.gating = np.empty((N, block), dtype=np.int64)  # 0 means infinity
        # read positions, one array per purpose
        self.pos = np.zeros((4, N), dtype=np.int64)
        for kind in range(4):
            for j in range(N):
                self.refill(kind, j)

    def refill(self, kind: int, j: int) -> None:
        rng = self._rngs[kind][j]
        B = self.block
        if kind == GAPS:
            self.gaps[j] = rng.exponential(self._scale[j], B)
        elif kind == SERVICE:
            self.service[j] = self.spec.service[j].sample(rng, B)
        elif kind == ROUTE:
            self.route[j] = rng.choice(self.spec.N + 1, size=B, p=self._route_p[j])
        else:
            ks, ps = self._gating[j]
            self.gating[j] = ks[rng.choice(ks.size, size=B, p=ps)] if ks.size > 1 else ks[0]
        self.pos[kind, j] = 0
