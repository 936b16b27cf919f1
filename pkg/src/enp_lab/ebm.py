"""Langevin sampling over encoder states, the persistent state memory, and the contrastive loss."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .policy import PolicyModel, state_energy_node


@dataclass(frozen=True)
class SgldConfig:
    """Langevin sampler settings.

    ``noise_var`` is the per-entry variance of the injected Gaussian. With
    ``matched_kernel`` the noise standard deviation is tied to ``step_size``
    instead, which is the discretized Langevin diffusion. ``state_bound``
    clamps samples to ``[-bound, bound]`` after every step; ``None`` disables it.
    """

    step_size: float = 1.5
    noise_var: float = 0.01
    iterations: int = 15
    matched_kernel: bool = False
    state_bound: float | None = 1.0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")
        if self.noise_var < 0:
            raise ValueError("noise_var must be >= 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.state_bound is not None and self.state_bound <= 0:
            raise ValueError("state_bound must be positive or None")

    @property
    def noise_std(self):
        return self.step_size if self.matched_kernel else float(np.sqrt(self.noise_var))

    @property
    def drift(self):
        return 0.5 * self.step_size**2


@dataclass
class SamplerStats:
    chains: int = 0
    aborts: int = 0
    rejected_stores: int = 0


class QuadraticEnergy:
    """E(s) = |s|^2 / 2; its Boltzmann distribution is the standard normal."""

    def state_energy(self, s):
        return 0.5 * float(np.sum(np.square(s)))

    def state_energy_grad(self, s):
        return np.asarray(s, dtype=np.float64)


def sgld_chain(model, s0, config, rng, stats=None, impl=None):
    """Run ``config.iterations`` Langevin steps from ``s0`` and return the endpoint.

    ``model`` is a :class:`PolicyModel` (routed through the compiled kernel) or
    any object with ``state_energy_grad(s)``. A non-finite gradient or state
    aborts the chain and returns ``s0``; ``stats.aborts`` counts those.
    """
    s0 = np.asarray(s0, dtype=np.float64)
    std = config.noise_std
    bound = config.state_bound or 0.0
    if stats is not None:
        stats.chains += 1

    if isinstance(model, PolicyModel):
        shape = (config.iterations,) + s0.shape
        noise = rng.standard_normal(shape) * std if std > 0 else np.zeros(shape)
        out, ok = kernels.sgld_linear_head(
            s0, model.params["head_w"], model.params["head_b"][0], config.drift, noise, bound, impl=impl
        )
        if not ok and stats is not None:
            stats.aborts += 1
        return out

    s = s0.copy()
    with np.errstate(all="ignore"):
        for _ in range(config.iterations):
            g = model.state_energy_grad(s)
            if not np.all(np.isfinite(g)):
                if stats is not None:
                    stats.aborts += 1
                return s0.copy()
            s = s - config.drift * g
            if std > 0:
                s = s + std * rng.standard_normal(s.shape)
            if bound:
                np.clip(s, -bound, bound, out=s)
    if not np.all(np.isfinite(s)):
        if stats is not None:
            stats.aborts += 1
        return s0.copy()
    return s


class MarginalStateMemory:
    """Bounded FIFO buffer of past chain endpoints used to warm-start new chains."""

    def __init__(self, state_shape, capacity=100, reinit_prob=0.05, stats=None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        if not 0.0 <= reinit_prob <= 1.0:
            raise ValueError("reinit_prob must be in [0, 1]")
        self.state_shape = tuple(state_shape)
        self.capacity = capacity
        self.reinit_prob = reinit_prob
        self.stats = stats if stats is not None else SamplerStats()
        self._buf = deque(maxlen=capacity)

    def __len__(self):
        return len(self._buf)

    def states(self):
        return [s.copy() for s in self._buf]

    def init_sample(self, rng):
        """A stored state with probability ``1 - reinit_prob``; else uniform on [-1, 1]."""
        if self._buf and rng.random() >= self.reinit_prob:
            return self._buf[int(rng.integers(len(self._buf)))].copy()
        return rng.uniform(-1.0, 1.0, size=self.state_shape)

    def store(self, s):
        s = np.array(s, dtype=np.float64, copy=True)
        if s.shape != self.state_shape:
            raise ValueError(f"state shape {s.shape} != {self.state_shape}")
        if not np.all(np.isfinite(s)):
            self.stats.rejected_stores += 1
            return False
        self._buf.append(s)
        return True


def marginal_loss(leaves, s_data, s_sample):
    """E(s_data) - E(s_sample) with the sample treated as a constant.

    Its parameter gradient is the single-sample contrastive estimate of the
    negative log-likelihood gradient of the state marginal.
    """
    sample = ad.constant(np.asarray(s_sample.value if isinstance(s_sample, ad.Tensor) else s_sample))
    return ad.add(state_energy_node(leaves, s_data), ad.scale(state_energy_node(leaves, sample), -1.0))
