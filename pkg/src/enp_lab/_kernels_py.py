"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and semantics; used when the extension is not built or when
``ENP_LAB_PURE_PYTHON`` is set.
"""

from collections import deque

import numpy as np


def sgld_linear_head(s0, w, b, step, noise, bound):
    s = np.array(s0, dtype=np.float64, copy=True)
    for i in range(noise.shape[0]):
        z = s @ w + b
        zmax = z.max()
        if not np.isfinite(zmax):
            return np.array(s0, dtype=np.float64, copy=True), False
        e = np.exp(z - zmax)
        p = e / e.sum()
        s = s + step * p[:, None] * w[None, :] + noise[i]
        if bound > 0.0:
            np.clip(s, -bound, bound, out=s)
        if not np.all(np.isfinite(s)):
            return np.array(s0, dtype=np.float64, copy=True), False
    return s, True


def dtw_manhattan(a, b):
    n, m = len(a), len(b)
    cost = np.abs(a[:, None, :] - b[None, :, :]).sum(axis=-1).astype(np.float64)
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            acc[i, j] = cost[i - 1, j - 1] + min(acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
    return float(acc[n, m])


def bfs_distances(free, goal_r, goal_c):
    h, w = free.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    if not free[goal_r, goal_c]:
        return dist
    dist[goal_r, goal_c] = 0
    queue = deque([(goal_r, goal_c)])
    while queue:
        r, c = queue.popleft()
        for dr, dc in ((-1, 0), (0, 1), (1, 0), (0, -1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and free[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                queue.append((nr, nc))
    return dist
