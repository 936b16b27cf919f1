# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: Langevin chain on a linear-head state energy, DTW and grid BFS."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, isfinite, fabs

cnp.import_array()


def sgld_linear_head(double[:, ::1] s0, double[::1] w, double b, double step,
                     double[:, :, ::1] noise, double bound):
    """Run the Langevin chain for E(s) = -logsumexp(s @ w + b).

    ``noise`` holds one pre-scaled draw per iteration. ``bound <= 0`` disables
    box clamping. Returns ``(s, ok)``; on a non-finite gradient or state the
    start point is returned with ``ok = False``.
    """
    cdef Py_ssize_t n_iter = noise.shape[0]
    cdef Py_ssize_t k_dim = s0.shape[0]
    cdef Py_ssize_t d_dim = s0.shape[1]
    cdef Py_ssize_t i, k, d
    cdef double zmax, total, p, v
    out = np.array(s0, dtype=np.float64, copy=True)
    cdef double[:, ::1] s = out
    logits_arr = np.empty(k_dim, dtype=np.float64)
    cdef double[::1] z = logits_arr

    for i in range(n_iter):
        zmax = -1e308
        for k in range(k_dim):
            v = b
            for d in range(d_dim):
                v += s[k, d] * w[d]
            z[k] = v
            if v > zmax:
                zmax = v
        if not isfinite(zmax):
            return np.array(s0, dtype=np.float64, copy=True), False
        total = 0.0
        for k in range(k_dim):
            z[k] = exp(z[k] - zmax)
            total += z[k]
        for k in range(k_dim):
            p = z[k] / total
            for d in range(d_dim):
                # grad of E w.r.t. s[k, d] is -p * w[d]
                v = s[k, d] + step * p * w[d] + noise[i, k, d]
                if bound > 0.0:
                    if v > bound:
                        v = bound
                    elif v < -bound:
                        v = -bound
                if not isfinite(v):
                    return np.array(s0, dtype=np.float64, copy=True), False
                s[k, d] = v
    return out, True


def dtw_manhattan(long[:, ::1] a, long[:, ::1] b):
    """Dynamic time warping cost between two cell sequences, Manhattan ground metric."""
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t i, j
    cdef double cost, best
    table = np.full((n + 1, m + 1), np.inf, dtype=np.float64)
    cdef double[:, ::1] acc = table
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = fabs(<double>(a[i - 1, 0] - b[j - 1, 0])) + fabs(<double>(a[i - 1, 1] - b[j - 1, 1]))
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost + best
    return acc[n, m]


def bfs_distances(unsigned char[:, ::1] free, Py_ssize_t goal_r, Py_ssize_t goal_c):
    """4-connected BFS distances from the goal cell; -1 marks blocked or unreachable cells."""
    cdef Py_ssize_t h = free.shape[0]
    cdef Py_ssize_t w = free.shape[1]
    dist_arr = np.full((h, w), -1, dtype=np.int64)
    cdef long[:, ::1] dist = dist_arr
    queue_arr = np.empty(h * w, dtype=np.int64)
    cdef long[::1] queue = queue_arr
    cdef Py_ssize_t head = 0, tail = 0, cur, r, c, nr, nc, j
    cdef int dr[4]
    cdef int dc[4]
    dr[:] = [-1, 0, 1, 0]
    dc[:] = [0, 1, 0, -1]
    if not free[goal_r, goal_c]:
        return dist_arr
    dist[goal_r, goal_c] = 0
    queue[tail] = goal_r * w + goal_c
    tail += 1
    while head < tail:
        cur = queue[head]
        head += 1
        r = cur // w
        c = cur % w
        for j in range(4):
            nr = r + dr[j]
            nc = c + dc[j]
            if nr < 0 or nr >= h or nc < 0 or nc >= w:
                continue
            if free[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                queue[tail] = nr * w + nc
                tail += 1
    return dist_arr
