"""Training harness for BC, DAgger, ENP and the tabular reverse-KL baseline.

ENP minimizes, per minibatch, the action cross-entropy plus the contrastive
state-energy term::

    L = sum_t -log P(a_t | s_t) + lambda_s * sum_t [E(s_t) - E(s_hat_t)]

where ``s_hat_t`` comes from a short Langevin chain warm-started from the
state memory. With ``lambda_s == 0`` no chain is run, and with ``beta == 0`` no
learner rollouts are aggregated, so that configuration reduces to BC.

Independent random streams are used for parameter init, minibatch shuffling,
Langevin noise and learner rollouts, so disabling one part does not shift the
draws of another.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .ebm import MarginalStateMemory, SamplerStats, SgldConfig, marginal_loss, sgld_chain
from .env import STOP, EnvConfig, LayoutCache, Trajectory, Step, expert_action, rollout
from .metrics import EpisodeResult, aggregate_metrics, bucket_labels, full_metrics
from .oracle import (
    SMOOTHING,
    forward_kl,
    lift_policy,
    occupancy,
    occupancy_node,
    reverse_kl_node,
)
from .policy import GreedyAgent, ModelDims, PolicyModel, encode_node, instruction_node, logits_node

log = logging.getLogger(__name__)

METHODS = ("bc", "dagger", "enp", "airl-tab")
EVAL_KEYS = ("SR", "SPL", "NE", "NDTW", "TL", "OSR", "SDTW")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "enp"
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 0.05
    beta: float = 0.5
    lambda_s: float = 1.0
    seed: int = 0
    aggregate_every: int = 1
    grad_clip: float = 10.0
    state_dim: int = 32
    init_scale: float = 1.0
    max_steps: int = 40
    agg_max_steps: int = 20
    eval_every: int = 1
    eval_splits: tuple = ("val_seen", "val_unseen")
    success_radius: int = 0
    ndtw_threshold: float = 3.0
    # Langevin sampler and state memory
    sgld_eps: float = 1.5
    sgld_noise_var: float = 0.01
    sgld_iters: int = 15
    sgld_iters_pretrain: int = 20
    pretrain_epochs: int = 0
    sgld_matched_kernel: bool = False
    sgld_state_bound: float | None = 1.0
    memory_capacity: int = 100
    memory_reinit_prob: float = 0.05

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if not 0.0 <= self.lambda_s <= 10.0:
            raise ValueError("lambda_s must be in [0, 10]")
        if self.aggregate_every < 1 or self.eval_every < 1:
            raise ValueError("aggregate_every and eval_every must be >= 1")
        if not 0.0 <= self.memory_reinit_prob <= 1.0:
            raise ValueError("memory_reinit_prob must be in [0, 1]")
        if self.memory_capacity < 1:
            raise ValueError("memory_capacity must be >= 1")
        object.__setattr__(self, "eval_splits", tuple(self.eval_splits))
        self.sgld()  # validates sampler fields

    def sgld(self, pretrain=False):
        return SgldConfig(
            step_size=self.sgld_eps,
            noise_var=self.sgld_noise_var,
            iterations=self.sgld_iters_pretrain if pretrain else self.sgld_iters,
            matched_kernel=self.sgld_matched_kernel,
            state_bound=self.sgld_state_bound,
        )

    @property
    def uses_aggregation(self):
        return self.method in ("dagger", "enp") and self.beta > 0

    @property
    def uses_marginal(self):
        return self.method == "enp" and self.lambda_s > 0

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["eval_splits"] = list(self.eval_splits)
        return d


class RunLog:
    """Append-only per-epoch records."""

    def __init__(self, header=None):
        self.header = header or {}
        self.records = []

    def append(self, record):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def to_jsonl(self):
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @staticmethod
    def read(path):
        log_ = RunLog()
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    log_.append(json.loads(line))
        return log_


class Streams:
    """Independent generators: init, shuffle, sgld, rollout."""

    def __init__(self, seed):
        init, shuffle, sgld, rollout_ = np.random.SeedSequence(int(seed)).spawn(4)
        self.init = np.random.default_rng(init)
        self.shuffle = np.random.default_rng(shuffle)
        self.sgld = np.random.default_rng(sgld)
        self.rollout = np.random.default_rng(rollout_)


# ---------------------------------------------------------------------------
# losses


def unroll(model, leaves, traj):
    """Encode a trajectory step by step; returns the list of state nodes."""
    inst = instruction_node(model, leaves, traj.instruction.tokens)
    h = ad.constant(model.initial_history())
    states = []
    for step in traj.steps:
        s, h = encode_node(model, leaves, inst, step.obs, h)
        states.append(s)
    return states


def step_nll(leaves, s, action):
    z = logits_node(leaves, s)
    return ad.add(ad.logsumexp(z), ad.scale(ad.index_select(z, [action], axis=0), -1.0))


def _sum_nodes(nodes):
    total = nodes[0]
    for n in nodes[1:]:
        total = ad.add(total, n)
    return total


def bc_loss(model, traj, leaves=None):
    """Sum over steps of -log P(expert action | encoded state)."""
    if not traj.steps:
        raise ValueError("trajectory must be non-empty")
    leaves = model.leaves() if leaves is None else leaves
    states = unroll(model, leaves, traj)
    return _sum_nodes([step_nll(leaves, s, st.action) for s, st in zip(states, traj.steps)])


def predict_action(model, tokens, observation, history):
    """Greedy action (lowest id on ties) and the updated history."""
    features = getattr(observation, "features", observation)
    s, h = model.encode_state(tokens, features, history)
    return int(np.argmax(model.action_logits(s))), h


def clip_gradients(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        grads = {k: g * factor for k, g in grads.items()}
    return grads, norm


class SGD:
    """Fixed-rate gradient descent with global-norm clipping."""

    def __init__(self, lr, clip=10.0):
        self.lr = lr
        self.clip = clip

    def step(self, model, grads):
        grads, norm = clip_gradients(grads, self.clip)
        model.apply_update(grads, self.lr)
        return norm


def batch_losses(model, leaves, batch, memory=None, sgld_config=None, rng=None, stats=None):
    """Graph nodes for the summed action loss and (optionally) the contrastive term.

    Returns ``(loss_pi, loss_s, n_steps)``; ``loss_s`` is None without a memory.
    """
    pi_terms, s_terms, n = [], [], 0
    for traj in batch:
        states = unroll(model, leaves, traj)
        for s, st in zip(states, traj.steps):
            pi_terms.append(step_nll(leaves, s, st.action))
            n += 1
            if memory is not None:
                s0 = memory.init_sample(rng)
                s_hat = sgld_chain(model, s0, sgld_config, rng, stats)
                memory.store(s_hat)
                s_terms.append(marginal_loss(leaves, s, s_hat))
    loss_pi = _sum_nodes(pi_terms)
    loss_s = _sum_nodes(s_terms) if s_terms else None
    return loss_pi, loss_s, n


def train_step_enp(model, batch, memory, sgld_config, optimizer, rng, lambda_s=1.0, stats=None):
    """One parameter update on ``L_pi + lambda_s * L_S``; returns both loss values."""
    leaves = model.leaves()
    use_marginal = lambda_s > 0 and memory is not None
    loss_pi, loss_s, _ = batch_losses(
        model, leaves, batch, memory if use_marginal else None, sgld_config, rng, stats
    )
    total = loss_pi if loss_s is None else ad.add(loss_pi, ad.scale(loss_s, lambda_s))
    grads = ad.backward(total)
    # parameters outside the graph (e.g. the history map on one-step batches) get zero gradient
    optimizer.step(model, {name: grads.get(leaf, np.zeros_like(leaf.value)) for name, leaf in leaves.items()})
    return float(loss_pi.value), (float(loss_s.value) if loss_s is not None else 0.0)


# ---------------------------------------------------------------------------
# rollouts


def aggregate(model, trajectories, layouts, env_config, rng, max_steps):
    """Learner rollouts (actions sampled from its softmax) relabeled by the expert."""
    out = []
    for traj in trajectories:
        layout = layouts(traj.layout_seed)
        agent = GreedyAgent(model, traj.instruction.tokens, rng=rng)
        run = rollout(layout, traj.instruction, agent, max_steps, env_config, traj.start)
        goal = traj.instruction.goal
        steps = [Step(st.obs, expert_action(layout, st.cell, goal), st.cell) for st in run.steps]
        out.append(Trajectory(traj.instruction, steps, traj.layout_seed))
    return out


def episode_result(layout, run, reference_traj, radius=0):
    goal = reference_traj.instruction.goal
    path = run.path(layout)
    dist = layout.distances_to(goal)
    return EpisodeResult(
        path=path,
        reference=reference_traj.path(layout),
        goal=goal,
        shortest_distance=int(dist[reference_traj.start]),
        radius=radius,
        goal_distances=[int(dist[c]) for c in path],
    )


def evaluate(model, trajectories, layouts, env_config, max_steps=40, radius=0, threshold=3.0,
             return_rows=False):
    """Greedy rollouts over ``trajectories``' episodes; aggregated metrics."""
    results = []
    for traj in trajectories:
        layout = layouts(traj.layout_seed)
        run = rollout(
            layout, traj.instruction, GreedyAgent(model, traj.instruction.tokens), max_steps,
            env_config, traj.start,
        )
        results.append(episode_result(layout, run, traj, radius))
    summary = aggregate_metrics(results, threshold)
    if return_rows:
        return summary, [full_metrics(r, threshold) for r in results]
    return summary


# ---------------------------------------------------------------------------
# tabular baseline


class TabularPolicy:
    """Softmax policy over the states of a tabular instance; state 0 is DONE (always STOP)."""

    def __init__(self, logits):
        self.logits = np.array(logits, dtype=np.float64)

    def policy_node(self, leaf):
        k = self.logits.shape[1]
        done = np.zeros((1, k))
        done[0, STOP] = 1.0
        rest = ad.softmax(ad.index_select(leaf, np.arange(1, self.logits.shape[0]), axis=0))
        return ad.concatenate([ad.constant(done), rest], axis=0)

    def policy(self):
        return self.policy_node(ad.Tensor(self.logits)).value

    def save(self, path, extra=None):
        ad.save_parameters(path, {"logits": self.logits}, {"model": "enp_lab.TabularPolicy", **(extra or {})})


def _tabular_record(instance, policy, expert_occ):
    learner = occupancy(instance.mdp, policy)
    return {
        "forward_kl": forward_kl(expert_occ, learner, SMOOTHING),
        "tabular_SR": instance.success_probability(policy),
    }


def _train_airl_tab(config, datasets, instance, log_):
    if instance is None:
        raise ValueError("airl-tab needs a tabular instance")
    expert_occ = instance.expert_occupancy()
    model = TabularPolicy(np.zeros((instance.mdp.n_states, instance.mdp.n_actions)))
    updates = max(1, math.ceil(len(datasets["train"]) / config.batch_size))
    for epoch in range(config.epochs):
        losses = []
        for _ in range(updates):
            leaf = ad.Tensor(model.logits)
            kl = reverse_kl_node(occupancy_node(instance.mdp, model.policy_node(leaf)), expert_occ)
            grads = ad.backward(kl)
            g, _ = clip_gradients({"logits": grads[leaf]}, config.grad_clip)
            model.logits -= config.learning_rate * g["logits"]
            losses.append(float(kl.value))
        rec = {"epoch": epoch, "loss_pi": float(np.mean(losses)), "loss_s": 0.0, "sgld_aborts": 0}
        rec.update(_tabular_record(instance, model.policy(), expert_occ))
        log_.append(rec)
    return model, log_


# ---------------------------------------------------------------------------
# main loop


def model_dims(env_config, config):
    return ModelDims(
        vocab_size=env_config.instruction_vocab_size,
        obs_dim=env_config.obs_dim,
        num_candidates=5,
        state_dim=config.state_dim,
    )


def _eval_record(summary):
    out = {k: summary[k] for k in EVAL_KEYS}
    for label in bucket_labels():
        v = summary[label]
        out[label] = None if math.isnan(v) else v
    return out


def train(config, datasets, env_config, instance=None, layouts=None, progress=None):
    """Train per ``config.method``; returns ``(model, RunLog)``.

    ``datasets`` maps split names to trajectory lists (``train`` required).
    ``instance`` (a tabular grid instance) adds exact forward-KL tracking and is
    required for ``airl-tab``.
    """
    if isinstance(config, dict):
        config = TrainConfig.from_dict(config)
    if not datasets.get("train"):
        raise ValueError("training split is empty")
    for split in config.eval_splits:
        if split not in datasets:
            raise ValueError(f"eval split {split!r} missing from datasets")
    log_ = RunLog({"config": config.to_dict(), "env_config": env_config.to_dict()})
    if config.method == "airl-tab":
        return _train_airl_tab(config, datasets, instance, log_)

    layouts = layouts or LayoutCache(env_config)
    streams = Streams(config.seed)
    dims = model_dims(env_config, config)
    model = PolicyModel.init(dims, streams.init, config.init_scale)
    optimizer = SGD(config.learning_rate, config.grad_clip)
    stats = SamplerStats()
    memory = None
    if config.uses_marginal:
        memory = MarginalStateMemory(
            (dims.num_candidates, dims.state_dim), config.memory_capacity, config.memory_reinit_prob, stats
        )
    expert_occ = instance.expert_occupancy() if instance is not None else None
    train_set = list(datasets["train"])
    pool = []

    for epoch in range(config.epochs):
        if config.uses_aggregation and epoch % config.aggregate_every == 0:
            pool.extend(aggregate(model, train_set, layouts, env_config, streams.rollout, config.agg_max_steps))
        order = [train_set[i] for i in streams.shuffle.permutation(len(train_set))]
        if config.uses_aggregation and pool:
            swap = streams.rollout.random(len(order)) < config.beta
            picks = streams.rollout.integers(len(pool), size=int(swap.sum()))
            it = iter(picks)
            order = [pool[next(it)] if sw else t for t, sw in zip(order, swap)]

        sgld_cfg = config.sgld(pretrain=epoch < config.pretrain_epochs)
        sum_pi = sum_s = 0.0
        n_steps = 0
        for b in range(0, len(order), config.batch_size):
            batch = order[b:b + config.batch_size]
            lp, ls = train_step_enp(
                model, batch, memory, sgld_cfg, optimizer, streams.sgld,
                config.lambda_s if config.uses_marginal else 0.0, stats,
            )
            sum_pi += lp
            sum_s += ls
            n_steps += sum(len(t) for t in batch)

        rec = {
            "epoch": epoch,
            "loss_pi": sum_pi / n_steps,
            "loss_s": sum_s / n_steps,
            "sgld_aborts": stats.aborts,
            "dataset_size": len(train_set) + len(pool),
        }
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            for split in config.eval_splits:
                summary = evaluate(
                    model, datasets[split], layouts, env_config, config.max_steps,
                    config.success_radius, config.ndtw_threshold,
                )
                rec[split] = _eval_record(summary)
        if expert_occ is not None:
            rec.update(_tabular_record(instance, lift_policy(model, instance), expert_occ))
        log_.append(rec)
        if progress is not None:
            progress(rec)
        log.debug("epoch %d: %s", epoch, rec)
    return model, log_
