import json
from collections import deque

import numpy as np
import pytest

from enp_lab.env import (
    DOWN,
    LEFT,
    RIGHT,
    STOP,
    UP,
    EnvConfig,
    Instruction,
    Layout,
    LayoutError,
    SeedSplit,
    Trajectory,
    UnreachableGoal,
    expert_action,
    expert_episode,
    expert_path,
    generate_dataset,
    generate_layout,
    observe,
    read_dataset,
    rollout,
    write_dataset,
)


def bfs_reference(layout, src):
    """Plain BFS over the transition function, independent of the kernel."""
    dist = {src: 0}
    queue = deque([src])
    while queue:
        cell = queue.popleft()
        for a in (UP, RIGHT, DOWN, LEFT):
            nxt = layout.step(cell, a)
            if nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return dist


def open_layout(h, w):
    return Layout(w, h, np.ones((h, w), dtype=bool), {0: (0, w - 1)}, seed=-1)


def test_layout_is_deterministic():
    a = generate_layout(0, EnvConfig())
    b = generate_layout(0, EnvConfig())
    assert np.array_equal(a.free, b.free)
    assert a.landmarks == b.landmarks


def test_layout_fingerprint_is_stable():
    # guards against silent changes to the generator's random stream
    layout = generate_layout(0, EnvConfig())
    assert int(layout.free.sum()) == 8 * 8 - len(layout.walls)
    assert layout.free.shape == (8, 8)
    again = generate_layout(0, EnvConfig())
    assert layout.free.tobytes() == again.free.tobytes()


def test_zero_density_has_no_walls():
    layout = generate_layout(3, EnvConfig(wall_density=0.0))
    assert layout.free.all()
    assert layout.walls == set()


def test_density_bound_enforced():
    with pytest.raises(ValueError):
        EnvConfig(wall_density=0.4)


def test_unknown_config_keys_rejected():
    with pytest.raises(ValueError, match="unknown"):
        EnvConfig.from_dict({"widht": 3})


@pytest.mark.parametrize("seed", range(20))
def test_layout_is_connected_with_distinct_free_landmarks(seed):
    layout = generate_layout(seed, EnvConfig())
    free = layout.free_cells()
    reach = bfs_reference(layout, free[0])
    assert set(reach) == set(free)
    cells = list(layout.landmarks.values())
    assert len(set(cells)) == len(cells)
    assert all(layout.is_free(c) for c in cells)


def test_retries_exhausted_raises():
    cfg = EnvConfig(width=3, height=3, wall_density=0.39, landmark_count=8, max_retries=1)
    with pytest.raises(LayoutError):
        for seed in range(50):
            generate_layout(seed, cfg)


def test_expert_stop_at_goal():
    layout = open_layout(3, 3)
    assert expert_action(layout, (1, 1), (1, 1)) == STOP


def test_expert_open_grid_row():
    layout = open_layout(3, 3)
    assert expert_action(layout, (0, 0), (0, 2)) == RIGHT
    # (2,2) from (0,0): both UP-free moves tie; down precedes nothing, right wins the order
    assert expert_action(layout, (0, 0), (2, 2)) == RIGHT
    assert expert_action(layout, (2, 2), (0, 0)) == UP


def test_expert_unreachable_goal():
    free = np.ones((3, 3), dtype=bool)
    free[:, 1] = False
    layout = Layout(3, 3, free, {}, seed=-1)
    with pytest.raises(UnreachableGoal):
        expert_action(layout, (0, 0), (0, 2))
    with pytest.raises(UnreachableGoal):
        expert_action(layout, (0, 1), (0, 0))


def test_expert_action_begins_shortest_path():
    rng = np.random.default_rng(0)
    for trial in range(50):
        layout = generate_layout(trial, EnvConfig())
        free = layout.free_cells()
        pos, goal = (free[i] for i in rng.choice(len(free), 2, replace=False))
        dist = bfs_reference(layout, goal)
        a = expert_action(layout, pos, goal)
        assert dist[layout.step(pos, a)] == dist[pos] - 1
        cells, actions = expert_path(layout, pos, goal)
        assert len(cells) - 1 == dist[pos]
        assert actions[-1] == STOP


def test_rollout_with_expert_is_optimal():
    layout = generate_layout(1, EnvConfig())
    cfg = EnvConfig()
    goal = layout.landmarks[sorted(layout.landmarks)[0]]
    start = max(layout.free_cells(), key=lambda c: layout.distance(c, goal))
    traj = expert_episode(layout, start, goal, cfg)
    assert len(traj) == layout.distance(start, goal) + 1
    assert traj.steps[-1].action == STOP and traj.steps[-1].cell == goal


def test_rollout_constant_stop_and_truncation():
    cfg = EnvConfig()
    layout = generate_layout(2, cfg)
    start = layout.free_cells()[0]
    inst = Instruction((cfg.vocab_size,), start)
    t = rollout(layout, inst, lambda obs: STOP, 10, cfg, start)
    assert len(t) == 1 and t.steps[0].cell == start
    t = rollout(layout, inst, lambda obs: RIGHT, 1, cfg, start)
    assert len(t) == 1 and t.steps[0].action == RIGHT
    with pytest.raises(ValueError):
        rollout(layout, inst, lambda obs: STOP, 0, cfg, start)


def test_wall_moves_are_noops():
    free = np.ones((2, 2), dtype=bool)
    layout = Layout(2, 2, free, {}, seed=-1)
    assert layout.step((0, 0), UP) == (0, 0)
    assert layout.step((0, 0), LEFT) == (0, 0)
    assert layout.step((0, 0), RIGHT) == (0, 1)


def test_callback_receives_only_observations():
    cfg = EnvConfig()
    layout = generate_layout(4, cfg)
    seen = []

    def policy(obs):
        seen.append(obs)
        return STOP if len(seen) == 3 else DOWN

    start = layout.free_cells()[0]
    rollout(layout, Instruction((cfg.vocab_size,), start), policy, 10, cfg, start)
    assert len(seen) == 3
    for obs in seen:
        assert set(vars(obs)) == {"features", "position", "heading"}
        assert obs.features.shape == (5, cfg.obs_dim)


def test_observation_rows_and_wall_indicator():
    cfg = EnvConfig()
    free = np.ones((3, 3), dtype=bool)
    free[0, 1] = False
    layout = Layout(3, 3, free, {0: (2, 2)}, seed=-1)
    obs = observe(layout, (1, 1), UP, cfg)
    assert obs.features.shape == (5, cfg.obs_dim)
    assert obs.features[UP, 0] == 1.0  # blocked
    assert obs.features[RIGHT, 0] == 0.0
    assert obs.features[STOP, 1] == 1.0  # STOP row flag
    # landmark 0 lies down-right: in both the DOWN and RIGHT sectors, nowhere else
    so = 5 + 9 + 2 * cfg.vocab_size
    assert obs.features[DOWN, so] > 0 and obs.features[RIGHT, so] > 0
    assert obs.features[UP, so] == 0 and obs.features[LEFT, so] == 0


def test_observation_has_no_coordinates():
    """Features are invariant to translating the whole scene."""
    cfg = EnvConfig(beacon_range=3, view_range=3)
    small = np.ones((4, 4), dtype=bool)
    small[1, 2] = False
    big = np.zeros((9, 9), dtype=bool)
    big[3:7, 4:8] = small
    a = Layout(4, 4, small, {1: (3, 3)}, seed=-1)
    b = Layout(9, 9, big, {1: (6, 7)}, seed=-1)
    for cell in a.free_cells():
        fa = observe(a, cell, RIGHT, cfg).features
        fb = observe(b, (cell[0] + 3, cell[1] + 4), RIGHT, cfg).features
        assert np.array_equal(fa, fb)


def test_dataset_counts_disjointness_and_replay():
    cfg = EnvConfig()
    split = SeedSplit(range(0, 8), range(80, 84))
    data = generate_dataset(split, 3, cfg)
    assert len(data["train"]) == 8 * 3
    assert len(data["val_seen"]) == 8
    assert len(data["val_unseen"]) == 4 * 3
    train_seeds = {t.layout_seed for t in data["train"]}
    unseen_seeds = {t.layout_seed for t in data["val_unseen"]}
    assert train_seeds == set(range(8))
    assert not train_seeds & unseen_seeds
    assert {t.layout_seed for t in data["val_seen"]} <= train_seeds
    for traj in data["train"] + data["val_unseen"]:
        layout = generate_layout(traj.layout_seed, cfg)
        cell = traj.start
        for step in traj.steps:
            assert step.cell == cell
            cell = layout.step(cell, step.action)
        assert traj.steps[-1].action == STOP
        assert traj.steps[-1].cell == traj.instruction.goal
        assert len(traj) - 1 == layout.distance(traj.start, traj.instruction.goal)
        toks = traj.instruction.tokens
        assert 1 <= len(toks) <= cfg.max_instruction_len
        assert layout.landmarks[toks[-1] - cfg.vocab_size] == traj.instruction.goal
        assert all(t < cfg.vocab_size for t in toks[:-1])


def test_val_seen_uses_fresh_episodes():
    cfg = EnvConfig()
    data = generate_dataset(SeedSplit(range(0, 10), range(50, 51)), 2, cfg)
    train = {(t.layout_seed, t.start, t.instruction.goal) for t in data["train"]}
    seen = {(t.layout_seed, t.start, t.instruction.goal) for t in data["val_seen"]}
    assert len(seen - train) > 0


def test_overlapping_split_rejected():
    with pytest.raises(ValueError, match="overlap"):
        SeedSplit(range(0, 10), range(5, 15))


def test_dataset_files_round_trip_and_are_deterministic(tmp_path):
    cfg = EnvConfig()
    split = SeedSplit(range(0, 3), range(10, 12))
    write_dataset(tmp_path / "a", generate_dataset(split, 2, cfg), cfg)
    write_dataset(tmp_path / "b", generate_dataset(split, 2, cfg), cfg)
    for name in ("train.jsonl", "val_seen.jsonl", "val_unseen.jsonl", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    data, cfg2, _ = read_dataset(tmp_path / "a")
    assert cfg2 == cfg
    original = generate_dataset(split, 2, cfg)["train"]
    for t1, t2 in zip(original, data["train"]):
        assert t1.to_record() == t2.to_record()
    rec = json.loads((tmp_path / "a" / "train.jsonl").read_text().splitlines()[0])
    assert set(rec) == {"layout_seed", "instruction_tokens", "goal", "steps"}
    assert set(rec["steps"][0]) == {"obs", "action", "cell"}


def test_trajectory_path_needs_layout_for_final_move():
    t = Trajectory(Instruction((0,), (0, 0)), [], 0)
    cfg = EnvConfig()
    layout = generate_layout(0, cfg)
    start = layout.free_cells()[0]
    t = rollout(layout, Instruction((cfg.vocab_size,), start), lambda o: DOWN, 1, cfg, start)
    with pytest.raises(ValueError):
        t.path()
    assert t.path(layout)[-1] == layout.step(start, DOWN)
