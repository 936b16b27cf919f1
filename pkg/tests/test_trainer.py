import math
from dataclasses import replace

import numpy as np
import pytest

from enp_lab import autodiff as ad
from enp_lab.ebm import MarginalStateMemory, SgldConfig, sgld_chain
from enp_lab.env import STOP, EnvConfig, LayoutCache, SeedSplit, Step, Trajectory, expert_action, generate_dataset
from enp_lab.policy import ModelDims, PolicyModel, state_energy_node
from enp_lab.trainer import (
    SGD,
    RunLog,
    TrainConfig,
    aggregate,
    bc_loss,
    model_dims,
    predict_action,
    train,
    train_step_enp,
    unroll,
)

FAST = dict(state_dim=8, eval_splits=(), batch_size=4)


class Recorder:
    """Optimizer stand-in that keeps the gradients instead of applying them."""

    def __init__(self):
        self.grads = None

    def step(self, model, grads):
        self.grads = grads
        return 0.0


@pytest.fixture(scope="module")
def data(env_config):
    return generate_dataset(SeedSplit(range(0, 4), range(100, 102)), 2, env_config)


@pytest.fixture
def model(env_config):
    return PolicyModel.init(ModelDims(env_config.instruction_vocab_size, env_config.obs_dim, state_dim=8),
                            np.random.default_rng(0))


def softmax(z):
    e = np.exp(z - z.max())
    return e / e.sum()


def test_bc_loss_uniform_model(env_config, data):
    m = PolicyModel.zeros(ModelDims(env_config.instruction_vocab_size, env_config.obs_dim, state_dim=8))
    traj = data["train"][0]
    assert ad.forward(bc_loss(m, traj)) == pytest.approx(len(traj) * math.log(5), abs=1e-12)


def test_bc_loss_matches_straight_line(model, data):
    for traj in data["train"][:3]:
        h = model.initial_history()
        inst = model.instruction_embedding(traj.instruction.tokens)
        total = 0.0
        for st in traj.steps:
            s, h = model.encode(inst, st.obs, h)
            total -= math.log(softmax(model.action_logits(s))[st.action])
        assert ad.forward(bc_loss(model, traj)) == pytest.approx(total, abs=1e-10)


def test_bc_loss_large_margin_goes_to_zero(env_config, data):
    m = PolicyModel.zeros(ModelDims(env_config.instruction_vocab_size, env_config.obs_dim, state_dim=5))
    # a STOP-only trajectory whose STOP row is the only one flagged in the obs
    traj = next(t for t in data["train"] if len(t) >= 1)
    step = traj.steps[-1]
    one = Trajectory(traj.instruction, [step], traj.layout_seed)
    m.params["obs_w"][1, 0] = 50.0  # is_stop feature
    m.params["fuse_w"][5, 0] = 50.0  # obs channel 0
    m.params["head_w"][0] = 100.0
    assert ad.forward(bc_loss(m, one)) < 1e-12


def test_gradient_is_sum_of_two_passes(model, data, env_config):
    """L_pi + L_S gradient equals separately computed action and energy gradients."""
    traj = Trajectory(data["train"][0].instruction, data["train"][0].steps[:1], data["train"][0].layout_seed)
    cfg = SgldConfig(noise_var=0.0, iterations=1)
    mem = MarginalStateMemory((5, 8), reinit_prob=1.0)
    rec = Recorder()
    train_step_enp(model, [traj], mem, cfg, rec, np.random.default_rng(4), lambda_s=1.0)

    rng = np.random.default_rng(4)
    s0 = MarginalStateMemory((5, 8), reinit_prob=1.0).init_sample(rng)
    s_hat = sgld_chain(model, s0, cfg, rng)

    la = model.leaves()
    g_pi = ad.backward(bc_loss(model, traj, la))
    lb = model.leaves()
    g_data = ad.backward(state_energy_node(lb, unroll(model, lb, traj)[0]))
    lc = model.leaves()
    g_sample = ad.backward(state_energy_node(lc, ad.constant(s_hat)))
    for name in model.params:
        expect = (g_pi.get(la[name], 0.0) + g_data.get(lb[name], 0.0) - g_sample.get(lc[name], 0.0))
        assert np.allclose(rec.grads[name], expect, atol=1e-10), name


def test_lambda_zero_beta_zero_is_bc(env_config, data):
    base = dict(FAST, epochs=2, seed=3)
    bc, _ = train(TrainConfig(method="bc", **base), data, env_config)
    enp, _ = train(TrainConfig(method="enp", lambda_s=0.0, beta=0.0, **base), data, env_config)
    for k in bc.params:
        assert np.array_equal(bc.params[k], enp.params[k])


def test_training_is_deterministic(env_config, data):
    cfg = TrainConfig(method="enp", epochs=2, sgld_iters=2, **FAST)
    m1, l1 = train(cfg, data, env_config)
    m2, l2 = train(cfg, data, env_config)
    assert l1.to_jsonl() == l2.to_jsonl()
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])


def test_epochs_zero_returns_init(env_config, data):
    m, log = train(TrainConfig(method="bc", epochs=0, **FAST), data, env_config)
    assert len(log) == 0
    fresh = PolicyModel.init(model_dims(env_config, TrainConfig(**FAST)), np.random.default_rng(
        np.random.SeedSequence(0).spawn(4)[0]))
    for k in m.params:
        assert np.array_equal(m.params[k], fresh.params[k])


def test_bc_memorizes_one_trajectory(env_config, data):
    one = {"train": [max(data["train"], key=len)]}
    cfg = TrainConfig(method="bc", epochs=300, learning_rate=0.2, state_dim=16, eval_splits=())
    _, log = train(cfg, one, env_config)
    assert log.records[-1]["loss_pi"] < 0.01


def test_config_errors(env_config, data):
    with pytest.raises(ValueError, match="unknown method"):
        TrainConfig(method="gail")
    with pytest.raises(ValueError):
        TrainConfig(beta=1.5)
    with pytest.raises(ValueError):
        TrainConfig(sgld_eps=0.0)
    with pytest.raises(ValueError, match="unknown config"):
        TrainConfig.from_dict({"lr": 1})
    with pytest.raises(ValueError, match="empty"):
        train(TrainConfig(**FAST), {"train": []}, env_config)
    with pytest.raises(ValueError, match="missing"):
        train(TrainConfig(method="bc", state_dim=8, eval_splits=("test",)), data, env_config)
    with pytest.raises(ValueError, match="instance"):
        train(TrainConfig(method="airl-tab", **FAST), data, env_config)


def test_predict_action_tie_break(env_config):
    m = PolicyModel.zeros(ModelDims(env_config.instruction_vocab_size, env_config.obs_dim, state_dim=4))
    a, h = predict_action(m, [0], np.zeros((5, env_config.obs_dim)), m.initial_history())
    assert a == 0 and h.shape == (4,)


def test_aggregate_examples(env_config, data):
    layouts = LayoutCache(env_config)
    rng = np.random.default_rng(0)
    trajs = data["train"]

    # STOP learner: one step, labeled with the expert's first move
    stop = PolicyModel.zeros(ModelDims(env_config.instruction_vocab_size, env_config.obs_dim, state_dim=5))
    stop.params["obs_w"][1, 0] = 10.0
    stop.params["fuse_w"][5, 0] = 10.0
    stop.params["head_w"][0] = 100.0
    out = aggregate(stop, trajs, layouts, env_config, rng, 20)
    for src, t in zip(trajs, out):
        assert len(t) == 1
        assert t.steps[0].cell == src.start
        assert t.steps[0].action == src.steps[0].action

    # random learner: every label is the BFS first move at the visited cell
    rand = PolicyModel.zeros(ModelDims(env_config.instruction_vocab_size, env_config.obs_dim, state_dim=4))
    many = generate_dataset(SeedSplit(range(200, 220), range(300, 301)), 1, env_config)["train"]
    for t in aggregate(rand, many, layouts, env_config, rng, 20):
        layout = layouts(t.layout_seed)
        dist = layout.distances_to(t.instruction.goal)
        for st in t.steps:
            if st.cell == t.instruction.goal:
                assert st.action == STOP
            else:
                assert dist[layout.step(st.cell, st.action)] == dist[st.cell] - 1


def test_aggregate_with_expert_like_learner_reproduces_demos(env_config, data):
    """A model trained to memorize the demos regenerates them under aggregation labels."""
    one = {"train": data["train"][:1]}
    cfg = TrainConfig(method="bc", epochs=300, learning_rate=0.2, state_dim=16, eval_splits=())
    m, _ = train(cfg, one, env_config)
    out = aggregate(m, one["train"], LayoutCache(env_config), env_config, np.random.default_rng(0), 20)
    src = one["train"][0]
    assert out[0].actions() == src.actions()


def test_memory_and_dataset_grow(env_config, data):
    cfg = TrainConfig(method="enp", epochs=2, sgld_iters=1, **FAST)
    _, log = train(cfg, data, env_config)
    sizes = [r["dataset_size"] for r in log.records]
    assert sizes == [2 * len(data["train"]), 3 * len(data["train"])]
    assert all(math.isfinite(r["loss_s"]) for r in log.records)


def test_runlog_round_trip(tmp_path):
    log = RunLog()
    log.append({"epoch": 0, "loss_pi": 1.5})
    log.write(tmp_path / "r.jsonl")
    assert RunLog.read(tmp_path / "r.jsonl").records == log.records


def test_eval_records_present(env_config, data):
    cfg = TrainConfig(method="bc", epochs=1, state_dim=8, eval_splits=("val_unseen",))
    _, log = train(cfg, data, env_config)
    rec = log.records[0]["val_unseen"]
    assert 0 <= rec["SPL"] <= rec["SR"] <= rec["OSR"] <= 1
