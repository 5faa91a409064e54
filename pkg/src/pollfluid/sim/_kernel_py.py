"""Pure-Python simulation kernel (reference and fallback for the compiled one).

The compiled kernel in ``_ckernel.pyx`` mirrors this file statement by
statement; keep the two in sync.
"""
from __future__ import annotations

import math

from ._streams import GAPS, GATING, ROUTE, SERVICE

STOPPED, HORIZON, EVENT_CAP = 0, 1, 2


def run_kernel(X_arr, next_arr_arr, occ_arr, clock, pos, max_visits, horizon, wait_if_empty,
               grid, grid_X, grid_occ, grid_ptr, streams, event_cap, events, rec):
    """Advance the polling network from ``clock`` with the server about to visit queue ``pos``.

    Mutates ``X_arr``, ``next_arr_arr``, ``occ_arr``, ``grid_X``, ``grid_occ`` and
    the stream positions in place.  Returns
    ``(clock, pos, grid_ptr, events, visits, status)``.
    """
    N = X_arr.shape[0]
    G = grid.shape[0]
    X = X_arr.tolist()
    next_arr = next_arr_arr.tolist()
    occ = occ_arr.tolist()
    grid_l = grid.tolist()
    B = streams.block
    spos = streams.pos
    # python-list copies of the buffer rows; refreshed after every refill
    rows = [[streams.gaps[j].tolist() for j in range(N)],
            [streams.service[j].tolist() for j in range(N)],
            [streams.route[j].tolist() for j in range(N)],
            [streams.gating[j].tolist() for j in range(N)]]
    rpos = spos.tolist()
    buffers = (streams.gaps, streams.service, streams.route, streams.gating)

    def draw(kind, j):
        p = rpos[kind][j]
        if p == B:
            streams.refill(kind, j)
            rows[kind][j] = buffers[kind][j].tolist()
            p = 0
        rpos[kind][j] = p + 1
        return rows[kind][j][p]

    visits = 0
    cur = -1
    vstart = 0.0
    status = STOPPED

    def arrivals(j, t, inclusive):
        nonlocal events
        while next_arr[j] < t or (inclusive and next_arr[j] == t):
            X[j] += 1
            events += 1
            next_arr[j] += draw(GAPS, j)

    def flush(upto):
        nonlocal grid_ptr
        while grid_ptr < G and grid_l[grid_ptr] < upto:
            g = grid_l[grid_ptr]
            for j in range(N):
                arrivals(j, g, True)
                grid_X[grid_ptr, j] = X[j]
                grid_occ[grid_ptr, j] = occ[j]
            if cur >= 0:
                grid_occ[grid_ptr, cur] += g - vstart
            grid_ptr += 1

    while True:
        if max_visits >= 0 and visits >= max_visits:
            break
        if pos == 0:
            for j in range(N):
                arrivals(j, clock, True)
            if rec is not None:
                rec.cycle_t.append(clock)
                rec.cycle_X.append(tuple(X))
            if wait_if_empty and sum(X) == 0:
                tnext = min(next_arr)
                if tnext > horizon:
                    flush(math.inf)
                    clock = horizon
                    status = HORIZON
                    break
                flush(tnext)
                clock = tnext
                for j in range(N):
                    arrivals(j, clock, True)

        i = pos
        if rec is not None:
            for j in range(N):
                arrivals(j, clock, False)
            rec.visit_t[i].append(clock)
            rec.visit_X[i].append(tuple(X))
        else:
            arrivals(i, clock, False)
        cur = i
        vstart = clock
        kappa = draw(GATING, i)

        stages = 0
        while X[i] > 0 and (kappa == 0 or stages < kappa):
            batch = X[i]
            stages += 1
            for _ in range(batch):
                t_end = clock + draw(SERVICE, i)
                if t_end > horizon:
                    flush(math.inf)
                    occ[i] += horizon - vstart
                    clock = horizon
                    status = HORIZON
                    break
                flush(t_end)
                clock = t_end
                X[i] -= 1
                d = draw(ROUTE, i)
                if d < N:
                    X[d] += 1
                events += 1
                if events > event_cap:
                    status = EVENT_CAP
                    break
            if status != STOPPED:
                break
            arrivals(i, clock, False)
        if status != STOPPED:
            break
        occ[i] += clock - vstart
        cur = -1
        visits += 1
        pos = i + 1 if i + 1 < N else 0

    if status != EVENT_CAP:
        for j in range(N):
            arrivals(j, clock, True)
    X_arr[:] = X
    next_arr_arr[:] = next_arr
    occ_arr[:] = occ
    spos[:] = rpos
    return clock, pos, grid_ptr, events, visits, status
