"""Exact occupancy measures on small finite-horizon instances.

Occupancy over horizon ``T``::

    d_0 = rho0,  d_{t+1}(s') = sum_{s,a: T(s,a)=s'} d_t(s) pi(a|s)
    rho(s, a) = sum_{t<T} d_t(s) pi(a|s)

Normalized tables divide by ``T``. Grid instances are built as history trees
so that a recurrent policy has exactly one history per tabular state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .env import (
    NUM_ACTIONS,
    STOP,
    UP,
    EnvConfig,
    Instruction,
    expert_action,
    expert_episode,
    generate_layout,
    make_instruction,
    expert_path,
    next_heading,
    observe,
)

SMOOTHING = 1e-8


class AmbiguousHistory(ValueError):
    """A tabular state is reachable through more than one history prefix."""


@dataclass
class TabularMdp:
    transition: np.ndarray  # (S, A) next-state indices
    rho0: np.ndarray  # (S,)
    horizon: int

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.int64)
        self.rho0 = np.asarray(self.rho0, dtype=np.float64)
        s, _ = self.transition.shape
        if self.rho0.shape != (s,):
            raise ValueError("rho0 must have one entry per state")
        if abs(self.rho0.sum() - 1.0) > 1e-12 or np.any(self.rho0 < 0):
            raise ValueError("rho0 must be a probability distribution")
        if self.transition.min() < 0 or self.transition.max() >= s:
            raise ValueError("transitions must stay inside the state set")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def n_states(self):
        return self.transition.shape[0]

    @property
    def n_actions(self):
        return self.transition.shape[1]


@dataclass
class OccupancyTable:
    values: np.ndarray  # (S, A)
    normalized: bool

    def total(self):
        return float(self.values.sum())

    def as_distribution(self):
        v = self.values
        return OccupancyTable(v / v.sum(), True) if not self.normalized else self

    def state_marginal(self):
        return self.values.sum(axis=1)

    def to_records(self, tol=0.0):
        idx = np.argwhere(self.values > tol)
        return [[int(s), int(a), float(self.values[s, a])] for s, a in idx]


def _check_policy(mdp, policy):
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {policy.shape} != {(mdp.n_states, mdp.n_actions)}")
    if np.any(policy < 0) or np.any(np.abs(policy.sum(axis=1) - 1.0) > 1e-12):
        bad = int(np.argmax(np.abs(policy.sum(axis=1) - 1.0)))
        raise ValueError(f"policy row {bad} is not a distribution")
    return policy


def occupancy(mdp, policy, normalize=True):
    policy = _check_policy(mdp, policy)
    d = mdp.rho0.copy()
    rho = np.zeros_like(policy)
    for t in range(mdp.horizon):
        flow = d[:, None] * policy
        rho += flow
        if t + 1 < mdp.horizon:
            d = np.bincount(mdp.transition.ravel(), weights=flow.ravel(), minlength=mdp.n_states)
    if normalize:
        rho = rho / mdp.horizon
    return OccupancyTable(rho, normalize)


def occupancy_node(mdp, policy):
    """Normalized occupancy as an autodiff node of a ``(S, A)`` policy node."""
    s, k = mdp.n_states, mdp.n_actions
    seg = mdp.transition.ravel()
    d = ad.constant(mdp.rho0)
    rho = None
    for t in range(mdp.horizon):
        tiled = ad.index_select(ad.reshape(d, (s, 1)), np.zeros(k, dtype=np.int64), axis=1)
        flow = ad.multiply(tiled, policy)
        rho = flow if rho is None else ad.add(rho, flow)
        if t + 1 < mdp.horizon:
            d = ad.segment_sum(ad.reshape(flow, (s * k,)), seg, s)
    return ad.scale(rho, 1.0 / mdp.horizon)


def recover_policy(table):
    """Conditional action distribution per state; unvisited states get uniform rows.

    Returns ``(policy, unvisited_mask)``.
    """
    v = np.asarray(table.values, dtype=np.float64)
    mass = v.sum(axis=1)
    unvisited = mass <= 0
    policy = np.full_like(v, 1.0 / v.shape[1])
    policy[~unvisited] = v[~unvisited] / mass[~unvisited, None]
    return policy, unvisited


def _distribution(table):
    v = np.asarray(table.values, dtype=np.float64)
    return v / v.sum()


def _smooth(p, eps):
    q = p + eps
    return q / q.sum()


def entropy(table):
    p = _distribution(table).ravel()
    nz = p > 0
    return float(-(p[nz] * np.log(p[nz])).sum())


def cross_entropy(p_table, q_table, smoothing=None):
    """-sum p log q, with 0 log 0 = 0 and +inf on support gaps unless smoothed."""
    p = _distribution(p_table).ravel()
    q = _distribution(q_table).ravel()
    if smoothing:
        q = _smooth(q, smoothing)
    nz = p > 0
    if np.any(q[nz] <= 0):
        return float("inf")
    return float(-(p[nz] * np.log(q[nz])).sum())


def forward_kl(expert, learner, smoothing=None):
    """KL(expert || learner); ``smoothing`` adds epsilon mass to the learner first."""
    p = _distribution(expert).ravel()
    q = _distribution(learner).ravel()
    if smoothing:
        q = _smooth(q, smoothing)
    nz = p > 0
    if np.any(q[nz] <= 0):
        return float("inf")
    return float(max((p[nz] * (np.log(p[nz]) - np.log(q[nz]))).sum(), 0.0))


class ReverseKL(NamedTuple):
    kl: float
    cross_entropy: float  # -E_learner[log expert]
    entropy: float  # H(learner)


def reverse_kl(learner, expert, smoothing=None):
    """KL(learner || expert) together with its cross-entropy / entropy split."""
    kl = forward_kl(learner, expert, smoothing)
    return ReverseKL(kl, cross_entropy(learner, expert, smoothing), entropy(learner))


def reverse_kl_node(occ, expert, smoothing=SMOOTHING):
    """Differentiable KL(occ || expert) for a normalized occupancy node."""
    q = _smooth(_distribution(expert), smoothing) if smoothing else _distribution(expert)
    p = ad.reshape(occ, (occ.value.size,))
    # small floor keeps log finite on zero-mass pairs; their contribution is 0 * log(.)
    logp = ad.log(ad.add(p, ad.constant(np.full(p.shape, 1e-300))))
    return ad.sum(ad.multiply(p, ad.add(logp, ad.constant(-np.log(q.ravel())))))


# ---------------------------------------------------------------------------
# grid instances


@dataclass
class TreeNode:
    episode: int
    cell: tuple
    heading: int
    phase: int
    prefixes: list = field(default_factory=list)  # action sequences reaching this node
    parent: int | None = None


@dataclass
class GridInstance:
    """Tabular lift of a few grid episodes.

    State 0 is an absorbing DONE state entered by STOP; its only action is STOP.
    Every other state is a node of the per-episode history tree (``keyed ==
    "history"``) or a merged ``(episode, cell, heading, phase)`` tuple
    (``keyed == "cell"``), which can be history-ambiguous.
    """

    mdp: TabularMdp
    env_config: EnvConfig
    layout: object
    instructions: list
    starts: list
    nodes: list
    keyed: str
    expert_policy: np.ndarray

    DONE = 0

    def expert_occupancy(self):
        return occupancy(self.mdp, self.expert_policy)

    def demonstrations(self):
        return [
            expert_episode(self.layout, start, instr.goal, self.env_config)
            for instr, start in zip(self.instructions, self.starts)
        ]

    def success_probability(self, policy):
        """Exact probability of issuing STOP on the goal cell within the horizon."""
        occ = occupancy(self.mdp, policy, normalize=False).values
        total = 0.0
        for i, node in enumerate(self.nodes):
            if i and node.cell == self.instructions[node.episode].goal:
                total += occ[i, STOP]
        return total


def build_grid_instance(layout, env_config, episodes, horizon, keyed="history"):
    """Enumerate reachable states of ``episodes`` (``(start, goal)`` or ``(start, Instruction)``)."""
    if keyed not in ("history", "cell"):
        raise ValueError("keyed must be 'history' or 'cell'")
    instructions, starts = [], []
    for start, target in episodes:
        start = tuple(start)
        if isinstance(target, Instruction):
            instr = target
        else:
            cells, _ = expert_path(layout, start, tuple(target))
            instr = make_instruction(layout, cells, tuple(target), env_config)
        instructions.append(instr)
        starts.append(start)

    nodes = [TreeNode(-1, (-1, -1), -1, -1)]
    transitions = [[0] * NUM_ACTIONS]
    index = {}
    frontier = []
    roots = []
    for e, start in enumerate(starts):
        nodes.append(TreeNode(e, start, UP, 0, [()]))
        transitions.append([0] * NUM_ACTIONS)
        roots.append(len(nodes) - 1)
        index[(e, start, UP, 0)] = len(nodes) - 1
        frontier.append(len(nodes) - 1)
    for t in range(horizon - 1):
        nxt_frontier = []
        for i in frontier:
            node = nodes[i]
            for a in range(NUM_ACTIONS):
                if a == STOP:
                    continue
                cell = layout.step(node.cell, a)
                heading = next_heading(node.heading, a, cell != node.cell)
                prefixes = [p + (a,) for p in node.prefixes]
                key = (node.episode, cell, heading, t + 1)
                if keyed == "cell" and key in index:
                    j = index[key]
                    nodes[j].prefixes.extend(prefixes)
                else:
                    nodes.append(TreeNode(node.episode, cell, heading, t + 1, prefixes, i))
                    transitions.append([0] * NUM_ACTIONS)
                    j = len(nodes) - 1
                    index[key] = j
                    nxt_frontier.append(j)
                transitions[i][a] = j
        frontier = nxt_frontier

    rho0 = np.zeros(len(nodes))
    rho0[roots] = 1.0 / len(roots)
    mdp = TabularMdp(np.array(transitions), rho0, horizon)
    expert = np.zeros((len(nodes), NUM_ACTIONS))
    expert[0, STOP] = 1.0
    for i, node in enumerate(nodes[1:], start=1):
        expert[i, expert_action(layout, node.cell, instructions[node.episode].goal)] = 1.0
    return GridInstance(mdp, env_config, layout, instructions, starts, nodes, keyed, expert)


def lift_policy(model, instance):
    """Action distribution of ``model`` at every tabular state of ``instance``."""
    for i, node in enumerate(instance.nodes[1:], start=1):
        if len(set(node.prefixes)) > 1:
            raise AmbiguousHistory(
                f"state {i} (cell {node.cell}, phase {node.phase}) has "
                f"{len(set(node.prefixes))} distinct histories"
            )
    policy = np.zeros((instance.mdp.n_states, NUM_ACTIONS))
    policy[0, STOP] = 1.0
    hist = {}
    insts = [model.instruction_embedding(ins.tokens) for ins in instance.instructions]
    for i, node in enumerate(instance.nodes[1:], start=1):
        h_in = model.initial_history() if node.parent is None else hist[node.parent]
        obs = observe(instance.layout, node.cell, node.heading, instance.env_config).features
        s, hist[i] = model.encode(insts[node.episode], obs, h_in)
        policy[i] = model.action_probs(s)
    return policy


# ---------------------------------------------------------------------------
# instance files


def load_instance(path):
    """Instance file: ``{env_config, layout_seed, horizon, episodes: [{start, goal, instruction_tokens?}]}``."""
    spec = json.loads(Path(path).read_text())
    unknown = set(spec) - {"env_config", "layout_seed", "horizon", "episodes", "keyed"}
    if unknown:
        raise ValueError(f"unknown instance keys: {sorted(unknown)}")
    cfg = EnvConfig.from_dict(spec.get("env_config", {}))
    layout = generate_layout(spec["layout_seed"], cfg)
    episodes = []
    for ep in spec["episodes"]:
        goal = tuple(ep["goal"])
        target = Instruction(tuple(ep["instruction_tokens"]), goal) if "instruction_tokens" in ep else goal
        episodes.append((tuple(ep["start"]), target))
    return build_grid_instance(layout, cfg, episodes, int(spec["horizon"]), spec.get("keyed", "history"))


def describe_state(instance, i):
    if i == 0:
        return {"state": 0, "kind": "done"}
    n = instance.nodes[i]
    return {
        "state": i,
        "kind": "node",
        "episode": n.episode,
        "cell": list(n.cell),
        "heading": n.heading,
        "phase": n.phase,
    }


# ---------------------------------------------------------------------------
# toy families


def bimodal_instance(k=5):
    """One decision state whose K actions lead to distinct absorbing leaves."""
    s = k + 1
    transition = np.zeros((s, k), dtype=np.int64)
    transition[0] = np.arange(1, k + 1)
    for i in range(1, s):
        transition[i] = i
    rho0 = np.zeros(s)
    rho0[0] = 1.0
    return TabularMdp(transition, rho0, horizon=2)


def bimodal_expert(k=5, modes=(0, None)):
    """Expert splitting 50/50 between the two extreme actions at the root."""
    hi = k - 1 if modes[1] is None else modes[1]
    pol = np.zeros((k + 1, k))
    pol[0, modes[0]] = 0.5
    pol[0, hi] = 0.5
    pol[1:, 0] = 1.0
    return pol


def unimodal_policy(k, mu, sigma):
    """Discretized Gaussian over action indices at the root; leaves fixed."""
    a = np.arange(k)
    w = np.exp(-0.5 * ((a - mu) / sigma) ** 2)
    pol = np.zeros((k + 1, k))
    pol[0] = w / w.sum()
    pol[1:, 0] = 1.0
    return pol


def mode_search(k=5, mus=None, sigmas=None, smoothing=SMOOTHING):
    """Grid-search the unimodal family under forward and reverse KL to a bimodal expert.

    Returns a dict with the optimal ``(mu, sigma)`` and occupancy entropies.
    """
    mdp = bimodal_instance(k)
    expert = occupancy(mdp, bimodal_expert(k))
    mus = np.linspace(0, k - 1, 4 * (k - 1) + 1) if mus is None else mus
    sigmas = np.geomspace(0.1, 10.0, 41) if sigmas is None else sigmas
    best_f, best_r = None, None
    for mu in mus:
        for sg in sigmas:
            learner = occupancy(mdp, unimodal_policy(k, mu, sg))
            f = forward_kl(expert, learner, smoothing)
            r = reverse_kl(learner, expert, smoothing).kl
            if best_f is None or f < best_f[0]:
                best_f = (f, mu, sg, entropy(learner))
            if best_r is None or r < best_r[0]:
                best_r = (r, mu, sg, entropy(learner))
    return {
        "forward": {"kl": best_f[0], "mu": best_f[1], "sigma": best_f[2], "entropy": best_f[3]},
        "reverse": {"kl": best_r[0], "mu": best_r[1], "sigma": best_r[2], "entropy": best_r[3]},
        "expert_entropy": entropy(expert),
    }
