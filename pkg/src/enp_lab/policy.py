"""Navigation policy: recurrent cross-modal state encoder plus a row-wise action head.

Per step, with instruction tokens ``x``, observation rows ``O`` (K x D_obs) and
history ``h`` (D)::

    inst   = mean(tok_embed[x])
    obs    = tanh(O @ obs_w + obs_b)                      # K x D
    state  = tanh([inst; obs_k; inst*obs_k; h] @ fuse_w + fuse_b)  # K x D
    h'     = tanh([h; mean_k state_k] @ hist_w + hist_b)
    logits = state @ head_w + head_b                      # K

Energies follow from the logits: the pair energy of candidate ``k`` is
``-logits[k]`` and the state energy is ``-logsumexp(logits)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

STATE_PARAMS = ("tok_embed", "obs_w", "obs_b", "fuse_w", "fuse_b", "hist_w", "hist_b")
ACTION_PARAMS = ("head_w", "head_b")
PARAM_NAMES = STATE_PARAMS + ACTION_PARAMS


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    obs_dim: int
    num_candidates: int = 5
    state_dim: int = 32

    def shapes(self):
        d = self.state_dim
        return {
            "tok_embed": (self.vocab_size, d),
            "obs_w": (self.obs_dim, d),
            "obs_b": (d,),
            "fuse_w": (4 * d, d),
            "fuse_b": (d,),
            "hist_w": (2 * d, d),
            "hist_b": (d,),
            "head_w": (d,),
            "head_b": (1,),
        }


def _logsumexp(z):
    m = z.max()
    return m + np.log(np.exp(z - m).sum())


class PolicyModel:
    """Parameters of encoder and action head, with numpy and graph evaluation."""

    def __init__(self, dims, params):
        self.dims = dims
        shapes = dims.shapes()
        missing = set(shapes) - set(params)
        if missing:
            raise ValueError(f"missing parameters: {sorted(missing)}")
        self.params = {}
        for name, shape in shapes.items():
            arr = np.array(params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"parameter {name}: expected shape {shape}, got {arr.shape}")
            self.params[name] = arr

    @classmethod
    def init(cls, dims, rng, scale=1.0):
        params = {}
        for name, shape in dims.shapes().items():
            if name.endswith("_b"):
                params[name] = np.zeros(shape)
            elif name == "tok_embed":
                params[name] = rng.standard_normal(shape) * scale
            else:
                params[name] = rng.standard_normal(shape) * scale / np.sqrt(shape[0])
        return cls(dims, params)

    @classmethod
    def zeros(cls, dims):
        return cls(dims, {n: np.zeros(s) for n, s in dims.shapes().items()})

    def copy(self):
        return PolicyModel(self.dims, {k: v.copy() for k, v in self.params.items()})

    def header(self):
        return {"model": "enp_lab.PolicyModel", "dims": asdict(self.dims)}

    def save(self, path, extra=None):
        ad.save_parameters(path, self.params, {**self.header(), **(extra or {})})

    @classmethod
    def load(cls, path):
        params, header = ad.load_parameters(path)
        if header.get("model") != "enp_lab.PolicyModel":
            raise ValueError(f"{path}: not a policy checkpoint")
        return cls(ModelDims(**header["dims"]), params), header

    # -- validation --------------------------------------------------------

    def _check_tokens(self, tokens):
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size == 0:
            raise ValueError("instruction must contain at least one token")
        if tokens.min() < 0 or tokens.max() >= self.dims.vocab_size:
            raise ValueError(
                f"token id out of range for vocab size {self.dims.vocab_size}: {tokens.tolist()}"
            )
        return tokens

    def _check_obs(self, obs):
        obs = np.asarray(obs, dtype=np.float64)
        want = (self.dims.num_candidates, self.dims.obs_dim)
        if obs.shape != want:
            raise ValueError(f"observation shape {obs.shape} != {want}")
        return obs

    def initial_history(self):
        return np.zeros(self.dims.state_dim)

    # -- numpy evaluation (no graph) ---------------------------------------

    def instruction_embedding(self, tokens):
        return self.params["tok_embed"][self._check_tokens(tokens)].mean(axis=0)

    def encode(self, inst, obs, history):
        """One encoder step from a precomputed instruction embedding."""
        p = self.params
        k = self.dims.num_candidates
        o = np.tanh(self._check_obs(obs) @ p["obs_w"] + p["obs_b"])
        tiled = np.tile(inst, (k, 1))
        z = np.concatenate([tiled, o, tiled * o, np.tile(history, (k, 1))], axis=1)
        s = np.tanh(z @ p["fuse_w"] + p["fuse_b"])
        h = np.tanh(np.concatenate([history, s.mean(axis=0)]) @ p["hist_w"] + p["hist_b"])
        return s, h

    def encode_state(self, tokens, obs, history):
        return self.encode(self.instruction_embedding(tokens), obs, history)

    def action_logits(self, s):
        s = np.asarray(s, dtype=np.float64)
        if s.shape != (self.dims.num_candidates, self.dims.state_dim):
            raise ValueError(f"state shape {s.shape} != {(self.dims.num_candidates, self.dims.state_dim)}")
        return s @ self.params["head_w"] + self.params["head_b"][0]

    def action_probs(self, s):
        z = self.action_logits(s)
        e = np.exp(z - z.max())
        return e / e.sum()

    def pair_energy(self, s, k):
        if not 0 <= k < self.dims.num_candidates:
            raise ValueError(f"action id {k} out of range")
        return float(-self.action_logits(s)[k])

    def state_energy(self, s):
        return float(-_logsumexp(self.action_logits(s)))

    def state_energy_grad(self, s):
        """Gradient of the state energy w.r.t. the state (closed form for the linear head)."""
        p = self.action_probs(s)
        return -p[:, None] * self.params["head_w"][None, :]

    # -- graph evaluation --------------------------------------------------

    def leaves(self):
        """Fresh graph leaves for every parameter, keyed by name."""
        return {name: Tensor(arr, name=name) for name, arr in self.params.items()}

    def apply_update(self, grads, lr):
        for name, g in grads.items():
            self.params[name] -= lr * g


# ---------------------------------------------------------------------------
# graph builders (differentiable w.r.t. parameters and states)


def instruction_node(model, leaves, tokens):
    tokens = model._check_tokens(tokens)
    return ad.mean(ad.index_select(leaves["tok_embed"], tokens, axis=0), axis=0)


def _tile_rows(vec, k):
    row = ad.reshape(vec, (1, vec.shape[0]))
    return ad.index_select(row, np.zeros(k, dtype=np.int64), axis=0)


def encode_node(model, leaves, inst, obs, history):
    """Graph version of :meth:`PolicyModel.encode`. Returns ``(state, history)`` nodes."""
    k = model.dims.num_candidates
    obs_t = ad.constant(model._check_obs(obs))
    o = ad.tanh(ad.add(ad.matmul(obs_t, leaves["obs_w"]), leaves["obs_b"]))
    tiled = _tile_rows(inst, k)
    z = ad.concatenate([tiled, o, ad.multiply(tiled, o), _tile_rows(history, k)], axis=1)
    s = ad.tanh(ad.add(ad.matmul(z, leaves["fuse_w"]), leaves["fuse_b"]))
    h_in = ad.concatenate([history, ad.mean(s, axis=0)], axis=0)
    h = ad.tanh(ad.add(ad.matmul(h_in, leaves["hist_w"]), leaves["hist_b"]))
    return s, h


def logits_node(leaves, s):
    return ad.add(ad.matmul(s, leaves["head_w"]), leaves["head_b"])


def state_energy_node(leaves, s):
    return ad.scale(ad.logsumexp(logits_node(leaves, s)), -1.0)


def pair_energy_node(leaves, s, k):
    return ad.scale(ad.index_select(logits_node(leaves, s), [k], axis=0), -1.0)


def state_energy_grad_autodiff(model, s):
    """Input gradient of the state energy through the autodiff engine."""
    s_leaf = Tensor(np.array(s, dtype=np.float64))
    grads = ad.backward(state_energy_node(model.leaves(), s_leaf))
    return grads[s_leaf]


class GreedyAgent:
    """Stateful rollout callback: greedy (or sampled) actions from a policy model."""

    def __init__(self, model, tokens, rng=None):
        self.model = model
        self.inst = model.instruction_embedding(tokens)
        self.history = model.initial_history()
        self.rng = rng

    def __call__(self, obs):
        s, self.history = self.model.encode(self.inst, obs.features, self.history)
        z = self.model.action_logits(s)
        if self.rng is None:
            return int(np.argmax(z))  # first maximum: lowest action id wins ties
        e = np.exp(z - z.max())
        return int(self.rng.choice(len(z), p=e / e.sum()))
