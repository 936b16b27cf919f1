import itertools
import math

import numpy as np
import pytest

from enp_lab.metrics import (
    EpisodeResult,
    aggregate_metrics,
    bucket_labels,
    dtw,
    episode_metrics,
    full_metrics,
    ndtw,
    sdtw,
)


def manhattan(a, b):
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def brute_force_dtw(p, q):
    """Minimum cost over every monotone alignment path, enumerated explicitly."""
    n, m = len(p), len(q)
    best = math.inf
    # an alignment is a lattice walk from (0,0) to (n-1,m-1) with steps (1,0), (0,1), (1,1)
    moves = [(1, 0), (0, 1), (1, 1)]

    def walk(i, j, cost):
        nonlocal best
        cost += manhattan(p[i], q[j])
        if (i, j) == (n - 1, m - 1):
            best = min(best, cost)
            return
        for di, dj in moves:
            if i + di < n and j + dj < m:
                walk(i + di, j + dj, cost)

    walk(0, 0, 0)
    return best


def test_dtw_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n, m = rng.integers(1, 7, size=2)
        p = [tuple(c) for c in rng.integers(0, 5, size=(n, 2))]
        q = [tuple(c) for c in rng.integers(0, 5, size=(m, 2))]
        assert dtw(p, q) == brute_force_dtw(p, q)


def test_ndtw_examples():
    path = [(0, 0), (0, 1), (1, 1)]
    assert ndtw(path, path) == 1.0
    assert ndtw([(0, 0)], [(2, 2)], threshold=3.0) == pytest.approx(math.exp(-4 / 3))
    with pytest.raises(ValueError):
        ndtw(path, path, threshold=0)


def test_sdtw_examples():
    ref = [(0, 0), (0, 1), (0, 2)]
    assert sdtw(ref, ref, (0, 2)) == ndtw(ref, ref)
    assert sdtw([(0, 0), (0, 1)], ref, (0, 2)) == 0.0


def test_episode_metric_examples():
    ref = [(0, 0), (0, 1), (0, 2)]
    m = episode_metrics(EpisodeResult(ref, ref, (0, 2), 2))
    assert (m["NE"], m["SR"], m["SPL"], m["TL"]) == (0.0, 1.0, 1.0, 2.0)
    far = [(3, 3), (3, 4)]
    m = episode_metrics(EpisodeResult(far, ref, (0, 2), 2))
    assert (m["SR"], m["OSR"], m["SPL"]) == (0.0, 0.0, 0.0)
    detour = [(0, 0), (1, 0), (1, 1), (0, 1), (0, 2)]
    assert episode_metrics(EpisodeResult(detour, ref, (0, 2), 2))["SPL"] == 0.5
    passing = [(0, 0), (0, 1), (0, 2), (1, 2)]
    m = episode_metrics(EpisodeResult(passing, ref, (0, 2), 2))
    assert (m["SR"], m["OSR"]) == (0.0, 1.0)


def test_zero_distance_spl_equals_sr():
    m = episode_metrics(EpisodeResult([(1, 1)], [(1, 1)], (1, 1), 0))
    assert m["SPL"] == m["SR"] == 1.0


def test_goal_distances_override_manhattan():
    # a wall makes the BFS distance differ from Manhattan
    r = EpisodeResult([(0, 0)], [(0, 0), (0, 1)], (0, 1), 3, goal_distances=[3])
    assert episode_metrics(r)["NE"] == 3.0
    with pytest.raises(ValueError):
        EpisodeResult([(0, 0)], [(0, 0)], (0, 1), 3, goal_distances=[1, 2])
    with pytest.raises(ValueError):
        EpisodeResult([], [(0, 0)], (0, 0), 0)


def test_metric_chain_on_random_episodes():
    rng = np.random.default_rng(1)
    for _ in range(500):
        path = [tuple(c) for c in rng.integers(0, 4, size=(rng.integers(1, 8), 2))]
        ref = [tuple(c) for c in rng.integers(0, 4, size=(rng.integers(1, 8), 2))]
        goal = ref[-1]
        m = full_metrics(EpisodeResult(path, ref, goal, manhattan(path[0], goal), radius=int(rng.integers(0, 2))))
        assert 0 <= m["SPL"] <= m["SR"] <= m["OSR"] <= 1
        assert 0 < m["NDTW"] <= 1 and m["SDTW"] <= m["NDTW"]


def test_aggregate_examples():
    ref = [(0, 0), (0, 1)]
    ok = EpisodeResult(ref, ref, (0, 1), 1)
    bad = EpisodeResult([(0, 0)], ref, (0, 1), 1)
    single = aggregate_metrics([ok])
    for k, v in full_metrics(ok).items():
        assert single[k] == v
    assert aggregate_metrics([ok, ok])["SR"] == 1.0
    agg = aggregate_metrics([ok, bad])
    assert agg["SR"] == 0.5 and agg["episodes"] == 2
    labels = bucket_labels()
    assert labels == ["SR_len_00_03", "SR_len_04_07", "SR_len_08_11", "SR_len_12_plus"]
    assert agg["SR_len_00_03"] == 0.5 and math.isnan(agg["SR_len_12_plus"])
    with pytest.raises(ValueError):
        aggregate_metrics([])
