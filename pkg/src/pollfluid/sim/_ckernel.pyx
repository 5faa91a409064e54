# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernel; a line-for-line port of ``_kernel_py.run_kernel``."""

from libc.math cimport INFINITY

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef enum:
    GAPS = 0
    SERVICE = 1
    ROUTE = 2
    GATING = 3

cdef enum:
    STOPPED = 0
    HORIZON = 1
    EVENT_CAP = 2


cdef class _Ctx:
    cdef cnp.int64_t[::1] X
    cdef double[::1] next_arr
    cdef double[::1] occ
    cdef double[::1] grid
    cdef cnp.int64_t[:, ::1] grid_X
    cdef double[:, ::1] grid_occ
    cdef double[:, ::1] gaps
    cdef double[:, ::1] service
    cdef cnp.int64_t[:, ::1] route
    cdef cnp.int64_t[:, ::1] gating
    cdef cnp.int64_t[:, ::1] spos
    cdef object streams
    cdef Py_ssize_t N, G, B, grid_ptr
    cdef long long events
    cdef int cur
    cdef double vstart

    cdef inline double draw_d(self, int kind, Py_ssize_t j) except? -1.0:
        cdef Py_ssize_t p = self.spos[kind, j]
        if p == self.B:
            self.streams.refill(kind, j)
            p = 0
        self.spos[kind, j] = p + 1
        if kind == GAPS:
            return self.gaps[j, p]
        return self.service[j, p]

    cdef inline long long draw_i(self, int kind, Py_ssize_t j) except? -1:
        cdef Py_ssize_t p = self.spos[kind, j]
        if p == self.B:
            self.streams.refill(kind, j)
            p = 0
        self.spos[kind, j] = p + 1
        if kind == ROUTE:
            return self.route[j, p]
        return self.gating[j, p]

    cdef inline int arrivals(self, Py_ssize_t j, double t, bint inclusive) except -1:
        while self.next_arr[j] < t or (inclusive and self.next_arr[j] == t):
            self.X[j] += 1
            self.events += 1
            self.next_arr[j] += self.draw_d(GAPS, j)
        return 0

    cdef int flush(self, double upto) except -1:
        cdef double g
        cdef Py_ssize_t j
        while self.grid_ptr < self.G and self.grid[self.grid_ptr] < upto:
            g = self.grid[self.grid_ptr]
            for j in range(self.N):
                self.arrivals(j, g, True)
                self.grid_X[self.grid_ptr, j] = self.X[j]
                self.grid_occ[self.grid_ptr, j] = self.occ[j]
            if self.cur >= 0:
                self.grid_occ[self.grid_ptr, self.cur] += g - self.vstart
            self.grid_ptr += 1
        return 0


def run_kernel(X_arr, next_arr_arr, occ_arr, double clock, Py_ssize_t pos, long long max_visits,
               double horizon, bint wait_if_empty, grid, grid_X, grid_occ, Py_ssize_t grid_ptr,
               streams, long long event_cap, long long events, rec):
    cdef _Ctx c = _Ctx()
    c.X = X_arr
    c.next_arr = next_arr_arr
    c.occ = occ_arr
    c.grid = grid
    c.grid_X = grid_X
    c.grid_occ = grid_occ
    c.gaps = streams.gaps
    c.service = streams.service
    c.route = streams.route
    c.gating = streams.gating
    c.spos = streams.pos
    c.streams = streams
    c.N = X_arr.shape[0]
    c.G = grid.shape[0]
    c.B = streams.block
    c.grid_ptr = grid_ptr
    c.events = events
    c.cur = -1
    c.vstart = 0.0

    cdef Py_ssize_t N = c.N
    cdef Py_ssize_t i, j, b
    cdef long long visits = 0, kappa, stages, batch, d, total
    cdef int status = STOPPED
    cdef double tnext, t_end

    while True:
        if max_visits >= 0 and visits >= max_visits:
            break
        if pos == 0:
            for j in range(N):
                c.arrivals(j, clock, True)
            if rec is not None:
                rec.cycle_t.append(clock)
                rec.cycle_X.append(tuple([c.X[j] for j in range(N)]))
            total = 0
            for j in range(N):
                total += c.X[j]
            if wait_if_empty and total == 0:
                tnext = c.next_arr[0]
                for j in range(1, N):
                    if c.next_arr[j] < tnext:
                        tnext = c.next_arr[j]
                if tnext > horizon:
                    c.flush(INFINITY)
                    clock = horizon
                    status = HORIZON
                    break
                c.flush(tnext)
                clock = tnext
                for j in range(N):
                    c.arrivals(j, clock, True)

        i = pos
        if rec is not None:
            for j in range(N):
                c.arrivals(j, clock, False)
            rec.visit_t[i].append(clock)
            rec.visit_X[i].append(tuple([c.X[j] for j in range(N)]))
        else:
            c.arrivals(i, clock, False)
        c.cur = <int>i
        c.vstart = clock
        kappa = c.draw_i(GATING, i)

        stages = 0
        while c.X[i] > 0 and (kappa == 0 or stages < kappa):
            batch = c.X[i]
            stages += 1
            for b in range(batch):
                t_end = clock + c.draw_d(SERVICE, i)
                if t_end > horizon:
                    c.flush(INFINITY)
                    c.occ[i] += horizon - c.vstart
                    clock = horizon
                    status = HORIZON
                    break
                c.flush(t_end)
                clock = t_end
                c.X[i] -= 1
                d = c.draw_i(ROUTE, i)
                if d < N:
                    c.X[d] += 1
                c.events += 1
                if c.events > event_cap:
                    status = EVENT_CAP
                    break
            if status != STOPPED:
                break
            c.arrivals(i, clock, False)
        if status != STOPPED:
            break
        c.occ[i] += clock - c.vstart
        c.cur = -1
        visits += 1
        pos = i + 1 if i + 1 < N else 0

    if status != EVENT_CAP:
        for j in range(N):
            c.arrivals(j, clock, True)
    return clock, pos, c.grid_ptr, c.events, visits, status
