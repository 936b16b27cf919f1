"""Procedural grid mazes with landmark-token instructions and a shortest-path expert.

Cells are ``(row, col)`` tuples. Actions are ``0..4``: up, right, down, left,
STOP. Moving into a wall or off the grid is a no-op that still consumes a step.

Each observation has one feature row per action candidate. Move rows describe
the neighbouring cell in that direction (blocked flag, local window, landmark
sightings along a line of sight, and landmarks lying in that direction's 90
degree sector within ``beacon_range``); the STOP row describes the current
cell. No row carries absolute coordinates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

UP, RIGHT, DOWN, LEFT, STOP = range(5)
NUM_ACTIONS = 5
ACTION_NAMES = ("up", "right", "down", "left", "stop")
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1), (0, 0))

# split tags mixed into episode seeds so val-seen instructions differ from train
_SPLIT_TAGS = {"train": 0, "val_seen": 1, "val_unseen": 2}


class LayoutError(RuntimeError):
    pass


class UnreachableGoal(ValueError):
    pass


@dataclass(frozen=True)
class EnvConfig:
    width: int = 8
    height: int = 8
    wall_density: float = 0.2
    landmark_count: int = 6
    vocab_size: int = 8
    max_instruction_len: int = 5
    window_radius: int = 1
    view_range: int = 4
    beacon_range: int = 16
    min_start_distance: int = 2
    max_retries: int = 200

    def __post_init__(self):
        if not 0.0 <= self.wall_density < 0.4:
            raise ValueError(f"wall_density must be in [0, 0.4), got {self.wall_density}")
        if self.landmark_count > self.vocab_size:
            raise ValueError("landmark_count cannot exceed vocab_size")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        if self.max_instruction_len < 1:
            raise ValueError("max_instruction_len must be >= 1")

    @property
    def obs_dim(self):
        window = (2 * self.window_radius + 1) ** 2
        return 5 + window + 3 * self.vocab_size

    @property
    def instruction_vocab_size(self):
        """Landmark ids ``t`` read "pass t"; ids ``vocab_size + t`` read "stop at t"."""
        return 2 * self.vocab_size

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown env config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class Layout:
    width: int
    height: int
    free: np.ndarray  # (height, width) bool
    landmarks: dict  # token -> cell
    seed: int
    _dist_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def walls(self):
        return {(int(r), int(c)) for r, c in zip(*np.nonzero(~self.free))}

    def is_free(self, cell):
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width and bool(self.free[r, c])

    def landmark_at(self, cell):
        for tok, lc in self.landmarks.items():
            if lc == cell:
                return tok
        return None

    def step(self, cell, action):
        """Transition function: next cell after ``action`` (walls are no-ops)."""
        dr, dc = MOVES[action]
        nxt = (cell[0] + dr, cell[1] + dc)
        return nxt if self.is_free(nxt) else cell

    def distances_to(self, goal):
        """BFS distance map to ``goal`` (-1 for blocked/unreachable)."""
        goal = (int(goal[0]), int(goal[1]))
        if goal not in self._dist_cache:
            self._dist_cache[goal] = kernels.bfs_distances(self.free, goal)
        return self._dist_cache[goal]

    def distance(self, a, b):
        return int(self.distances_to(b)[a[0], a[1]])

    def free_cells(self):
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(self.free))]


@dataclass(frozen=True)
class Instruction:
    tokens: tuple
    goal: tuple


@dataclass
class Observation:
    features: np.ndarray  # (K, obs_dim)
    position: tuple
    heading: int


@dataclass
class Step:
    obs: np.ndarray  # (K, obs_dim) features only
    action: int
    cell: tuple


@dataclass
class Trajectory:
    instruction: Instruction
    steps: list
    layout_seed: int

    def __len__(self):
        return len(self.steps)

    @property
    def start(self):
        return self.steps[0].cell

    def actions(self):
        return [s.action for s in self.steps]

    def path(self, layout=None):
        """Visited cells: each step's cell plus the cell reached by the last move.

        The final cell needs ``layout`` when the last action is a move.
        """
        cells = [s.cell for s in self.steps]
        last = self.steps[-1]
        if last.action != STOP:
            if layout is None:
                raise ValueError("layout required to resolve the final move")
            cells.append(layout.step(last.cell, last.action))
        return cells

    def to_record(self):
        return {
            "layout_seed": int(self.layout_seed),
            "instruction_tokens": [int(t) for t in self.instruction.tokens],
            "goal": [int(v) for v in self.instruction.goal],
            "steps": [
                {
                    "obs": [float(v) for v in s.obs.ravel()],
                    "action": int(s.action),
                    "cell": [int(v) for v in s.cell],
                }
                for s in self.steps
            ],
        }

    @classmethod
    def from_record(cls, rec, num_candidates=NUM_ACTIONS):
        steps = [
            Step(
                obs=np.asarray(st["obs"], dtype=np.float64).reshape(num_candidates, -1),
                action=int(st["action"]),
                cell=tuple(st["cell"]),
            )
            for st in rec["steps"]
        ]
        instr = Instruction(tuple(rec["instruction_tokens"]), tuple(rec["goal"]))
        return cls(instr, steps, int(rec["layout_seed"]))


# ---------------------------------------------------------------------------
# layouts


def _connected(free):
    cells = np.argwhere(free)
    if len(cells) == 0:
        return False
    dist = kernels.bfs_distances(free, tuple(cells[0]))
    return bool(np.all(dist[free] >= 0))


def generate_layout(seed, config=EnvConfig()):
    """Deterministic maze for ``seed``; walls are resampled until free cells connect."""
    rng = np.random.default_rng([int(seed), 0x1A7])
    h, w = config.height, config.width
    for _ in range(config.max_retries):
        free = rng.random((h, w)) >= config.wall_density
        if free.sum() < max(config.landmark_count, 2) or not _connected(free):
            continue
        cells = np.argwhere(free)
        picks = rng.choice(len(cells), size=config.landmark_count, replace=False)
        tokens = rng.choice(config.vocab_size, size=config.landmark_count, replace=False)
        landmarks = {
            int(t): (int(cells[i][0]), int(cells[i][1])) for t, i in zip(tokens, picks)
        }
        return Layout(w, h, free, landmarks, int(seed))
    raise LayoutError(f"no connected layout for seed {seed} after {config.max_retries} tries")


# ---------------------------------------------------------------------------
# expert


def expert_action(layout, position, goal):
    """First move of a BFS shortest path; ties broken up < right < down < left."""
    position, goal = tuple(position), tuple(goal)
    if not layout.is_free(position) or not layout.is_free(goal):
        raise UnreachableGoal(f"position {position} or goal {goal} is not a free cell")
    if position == goal:
        return STOP
    dist = layout.distances_to(goal)
    here = dist[position]
    if here < 0:
        raise UnreachableGoal(f"goal {goal} unreachable from {position}")
    for a in (UP, RIGHT, DOWN, LEFT):
        nxt = layout.step(position, a)
        if nxt != position and dist[nxt] == here - 1:
            return a
    raise UnreachableGoal(f"no descending neighbour at {position}")  # corrupted distance map


def expert_path(layout, start, goal):
    cells, actions = [tuple(start)], []
    cur = tuple(start)
    while True:
        a = expert_action(layout, cur, goal)
        actions.append(a)
        if a == STOP:
            return cells, actions
        cur = layout.step(cur, a)
        cells.append(cur)


# ---------------------------------------------------------------------------
# observations


def _ray(layout, cell, direction, view_range):
    """Free cells seen from ``cell`` along ``direction`` before a wall, nearest first."""
    dr, dc = MOVES[direction]
    out = []
    r, c = cell
    for _ in range(view_range):
        r, c = r + dr, c + dc
        if not layout.is_free((r, c)):
            break
        out.append((r, c))
    return out


def _sector_directions(dr, dc):
    """Move directions whose 90 degree sector contains offset ``(dr, dc)``; diagonals hit two."""
    out = []
    if dr < 0 and -dr >= abs(dc):
        out.append(UP)
    if dc > 0 and dc >= abs(dr):
        out.append(RIGHT)
    if dr > 0 and dr >= abs(dc):
        out.append(DOWN)
    if dc < 0 and -dc >= abs(dr):
        out.append(LEFT)
    return out


def observe(layout, position, heading, config):
    """Feature rows for the five candidates at ``position``.

    Row layout: [blocked, is_stop, continues_heading, reverses_heading,
    ray_length, window..., ray_landmarks(vocab)..., here_landmark(vocab)...,
    sector_landmarks(vocab)...].
    """
    k_rows = NUM_ACTIONS
    v = config.vocab_size
    rad = config.window_radius
    win = 2 * rad + 1
    feats = np.zeros((k_rows, config.obs_dim))
    wo = 5
    lo = wo + win * win
    ho = lo + v
    so = ho + v

    def window(center):
        out = np.empty(win * win)
        i = 0
        for dr in range(-rad, rad + 1):
            for dc in range(-rad, rad + 1):
                out[i] = 0.0 if layout.is_free((center[0] + dr, center[1] + dc)) else 1.0
                i += 1
        return out

    for a in (UP, RIGHT, DOWN, LEFT):
        row = feats[a]
        dr, dc = MOVES[a]
        nb = (position[0] + dr, position[1] + dc)
        row[0] = 0.0 if layout.is_free(nb) else 1.0
        row[2] = 1.0 if heading == a else 0.0
        row[3] = 1.0 if heading == (a + 2) % 4 else 0.0
        ray = _ray(layout, position, a, config.view_range)
        row[4] = len(ray) / config.view_range
        row[wo:lo] = window(nb)
        for dist, cell in enumerate(ray, start=1):
            tok = layout.landmark_at(cell)
            if tok is not None:
                row[lo + tok] = max(row[lo + tok], 1.0 - (dist - 1) / config.view_range)
    if config.beacon_range > 0:
        for tok, cell in layout.landmarks.items():
            dr, dc = cell[0] - position[0], cell[1] - position[1]
            dist = abs(dr) + abs(dc)
            if dist == 0 or dist > config.beacon_range:
                continue
            strength = 1.0 - (dist - 1) / config.beacon_range
            for a in _sector_directions(dr, dc):
                feats[a, so + tok] = max(feats[a, so + tok], strength)
    stop = feats[STOP]
    stop[1] = 1.0
    stop[wo:lo] = window(position)
    tok = layout.landmark_at(position)
    if tok is not None:
        stop[ho + tok] = 1.0
    return Observation(feats, tuple(position), heading)


def next_heading(heading, action, moved):
    return action if (action != STOP and moved) else heading


# ---------------------------------------------------------------------------
# episodes


def rollout(layout, instruction, policy, max_steps, config, start, heading=UP):
    """Run ``policy(observation) -> action`` from ``start`` until STOP or ``max_steps``.

    The callback only ever sees :class:`Observation` objects.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    steps = []
    cell = tuple(start)
    for _ in range(max_steps):
        obs = observe(layout, cell, heading, config)
        a = int(policy(obs))
        steps.append(Step(obs.features, a, cell))
        if a == STOP:
            break
        nxt = layout.step(cell, a)
        heading = next_heading(heading, a, nxt != cell)
        cell = nxt
    return Trajectory(instruction, steps, layout.seed)


def make_instruction(layout, path_cells, goal, config):
    """Landmarks sighted along the route (not stepped on), in order, ending at the goal.

    Waypoints use their landmark id; the goal uses ``vocab_size + id`` so its
    role survives order-free pooling.
    """
    on_path = set(path_cells)
    goal_tok = layout.landmark_at(goal)
    if goal_tok is None:
        raise ValueError(f"goal {goal} is not a landmark cell")
    seen = []
    for cell in path_cells:
        for a in (UP, RIGHT, DOWN, LEFT):
            for rc in _ray(layout, cell, a, config.view_range):
                tok = layout.landmark_at(rc)
                if tok is not None and tok != goal_tok and rc not in on_path and tok not in seen:
                    seen.append(tok)
    tokens = (seen + [config.vocab_size + goal_tok])[-config.max_instruction_len:]
    return Instruction(tuple(int(t) for t in tokens), tuple(goal))


def sample_episode(layout, rng, config):
    """Pick a landmark goal and a start at least ``min_start_distance`` away."""
    toks = sorted(layout.landmarks)
    for _ in range(64):
        goal = layout.landmarks[toks[int(rng.integers(len(toks)))]]
        dist = layout.distances_to(goal)
        candidates = [c for c in layout.free_cells() if dist[c] >= config.min_start_distance]
        if candidates:
            start = candidates[int(rng.integers(len(candidates)))]
            return start, goal
    raise LayoutError(f"layout {layout.seed}: no start far enough from any goal")


def expert_episode(layout, start, goal, config):
    cells, _ = expert_path(layout, start, goal)
    instr = make_instruction(layout, cells, goal, config)
    return rollout(
        layout,
        instr,
        lambda obs: expert_action(layout, obs.position, goal),
        max_steps=len(cells) + 1,
        config=config,
        start=start,
    )


class LayoutCache:
    """Memoizes ``generate_layout`` per seed for a fixed config."""

    def __init__(self, config):
        self.config = config
        self._layouts = {}

    def __call__(self, seed):
        seed = int(seed)
        if seed not in self._layouts:
            self._layouts[seed] = generate_layout(seed, self.config)
        return self._layouts[seed]


def _episodes_for(layout, split, n, config):
    rng = np.random.default_rng([layout.seed, _SPLIT_TAGS[split], 0xE915])
    out = []
    for _ in range(n):
        start, goal = sample_episode(layout, rng, config)
        out.append(expert_episode(layout, start, goal, config))
    return out


@dataclass(frozen=True)
class SeedSplit:
    train: range
    unseen: range

    def __post_init__(self):
        if set(self.train) & set(self.unseen):
            raise ValueError("train and unseen layout seed ranges overlap")


def generate_dataset(split, episodes_per_layout, config=EnvConfig(), val_seen_per_layout=1,
                     val_unseen_per_layout=None):
    """Expert demonstrations for train / val_seen / val_unseen.

    val_seen reuses train layouts with fresh episodes; val_unseen uses the
    held-out seeds (``episodes_per_layout`` each unless overridden).
    """
    if isinstance(split, tuple):
        split = SeedSplit(*split)
    unseen_n = episodes_per_layout if val_unseen_per_layout is None else val_unseen_per_layout
    cache = LayoutCache(config)
    data = {"train": [], "val_seen": [], "val_unseen": []}
    for seed in split.train:
        layout = cache(seed)
        data["train"].extend(_episodes_for(layout, "train", episodes_per_layout, config))
        data["val_seen"].extend(_episodes_for(layout, "val_seen", val_seen_per_layout, config))
    for seed in split.unseen:
        data["val_unseen"].extend(_episodes_for(cache(seed), "val_unseen", unseen_n, config))
    return data


# ---------------------------------------------------------------------------
# dataset files

SPLITS = ("train", "val_seen", "val_unseen")


def write_split(path, trajectories):
    with open(path, "w") as fh:
        for t in trajectories:
            fh.write(json.dumps(t.to_record(), separators=(",", ":")))
            fh.write("\n")


def read_split(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(Trajectory.from_record(json.loads(line)))
    return out


def write_dataset(directory, data, config, meta=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        write_split(directory / f"{name}.jsonl", data[name])
    info = {"env_config": config.to_dict(), **(meta or {})}
    (directory / "meta.json").write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")


def read_dataset(directory):
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    config = EnvConfig.from_dict(meta["env_config"])
    data = {name: read_split(directory / f"{name}.jsonl") for name in SPLITS}
    return data, config, meta
