"""Grid-scale navigation metrics: TL, NE, SR, OSR, SPL, NDTW, SDTW."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

METRIC_NAMES = ("TL", "NE", "SR", "OSR", "SPL", "NDTW", "SDTW")


def manhattan(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


@dataclass
class EpisodeResult:
    """One evaluated episode.

    ``goal_distances`` holds the BFS distance to the goal of every cell in
    ``path``; when omitted, Manhattan distance stands in (open grids).
    """

    path: list
    reference: list
    goal: tuple
    shortest_distance: int
    radius: int = 0
    goal_distances: list | None = None

    def __post_init__(self):
        if not self.path or not self.reference:
            raise ValueError("path and reference must be non-empty")
        if self.goal_distances is None:
            self.goal_distances = [manhattan(c, self.goal) for c in self.path]
        elif len(self.goal_distances) != len(self.path):
            raise ValueError("goal_distances must align with path")


def path_length(path):
    return sum(manhattan(a, b) for a, b in zip(path[:-1], path[1:]))


def episode_metrics(result):
    tl = path_length(result.path)
    ne = result.goal_distances[-1]
    sr = 1.0 if ne <= result.radius else 0.0
    osr = 1.0 if min(result.goal_distances) <= result.radius else 0.0
    l = result.shortest_distance
    spl = sr if l == 0 else sr * l / max(tl, l)
    return {"TL": float(tl), "NE": float(ne), "SR": sr, "OSR": osr, "SPL": spl}


def dtw(path, reference):
    """DTW alignment cost with Manhattan cell distance."""
    return kernels.dtw_manhattan(np.asarray(path), np.asarray(reference))


def ndtw(path, reference, threshold=3.0):
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return math.exp(-dtw(path, reference) / (len(reference) * threshold))


def sdtw(path, reference, goal, radius=0, threshold=3.0, goal_distances=None):
    final = goal_distances[-1] if goal_distances is not None else manhattan(path[-1], goal)
    return ndtw(path, reference, threshold) if final <= radius else 0.0


def full_metrics(result, threshold=3.0):
    m = episode_metrics(result)
    m["NDTW"] = ndtw(result.path, result.reference, threshold)
    m["SDTW"] = m["SR"] * m["NDTW"]
    return m


def bucket_labels(width=4, n_buckets=4):
    labels = [f"SR_len_{i * width:02d}_{(i + 1) * width - 1:02d}" for i in range(n_buckets - 1)]
    labels.append(f"SR_len_{(n_buckets - 1) * width:02d}_plus")
    return labels


def aggregate_metrics(results, threshold=3.0, bucket_width=4, n_buckets=4):
    """Means of every metric plus success rate bucketed by reference path length.

    Empty buckets report NaN.
    """
    results = list(results)
    if not results:
        raise ValueError("aggregate_metrics needs at least one result")
    rows = [full_metrics(r, threshold) for r in results]
    out = {name: float(np.mean([row[name] for row in rows])) for name in METRIC_NAMES}
    labels = bucket_labels(bucket_width, n_buckets)
    sums = np.zeros(n_buckets)
    counts = np.zeros(n_buckets)
    for r, row in zip(results, rows):
        b = min(path_length(r.reference) // bucket_width, n_buckets - 1)
        sums[b] += row["SR"]
        counts[b] += 1
    for i, label in enumerate(labels):
        out[label] = float(sums[i] / counts[i]) if counts[i] else float("nan")
    out["episodes"] = len(results)
    return out
