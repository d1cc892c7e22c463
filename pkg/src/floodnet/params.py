"""Named trainable tensors with per-parameter AdamW state.

Initialization is a pure function of (store seed, parameter name), so two
stores built with the same seed and the same creation calls are
bit-identical regardless of creation order.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamWConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 1e-4

    def validate(self) -> None:
        if not 0.0 < self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in (0,1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in (0,1), got {self.beta2}")
        if self.learning_rate < 0.0:
            raise ValueError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")


@dataclass
class ParamEntry:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParamStore:
    """Map from hierarchical name to trainable tensor plus optimizer state.

    `buffers` holds non-trainable state (batch-norm running statistics).
    Iteration is sorted by name for determinism.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.entries: dict[str, ParamEntry] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def add(self, name: str, shape, init: str = "fanin", fan_in: int | None = None) -> None:
        if name in self.entries:
            raise KeyError(f"duplicate parameter {name!r}")
        shape = tuple(shape)
        if init == "zeros":
            value = np.zeros(shape)
        elif init == "ones":
            value = np.ones(shape)
        elif init == "fanin":
            if fan_in is None:
                fan_in = int(np.prod(shape[:-1])) if len(shape) > 1 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            value = self._rng(name).uniform(-bound, bound, size=shape)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.entries[name] = ParamEntry(
            value=value, grad=np.zeros(shape), m=np.zeros(shape), v=np.zeros(shape)
        )

    def add_buffer(self, name: str, value: np.ndarray) -> None:
        if name in self.buffers:
            raise KeyError(f"duplicate buffer {name!r}")
        self.buffers[name] = np.asarray(value, dtype=np.float64)

    def names(self) -> list[str]:
        return sorted(self.entries)

    def zero_grad(self) -> None:
        for e in self.entries.values():
            e.grad.fill(0.0)

    def n_params(self) -> int:
        return sum(e.value.size for e in self.entries.values())


def adamw_step(store: ParamStore, config: AdamWConfig) -> None:
    """One decoupled-weight-decay Adam update; zeroes gradients afterwards."""
    lr, b1, b2, eps, wd = (
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
        config.weight_decay,
    )
    for name in store.names():
        e = store.entries[name]
        e.step += 1
        # decay decoupled from the adaptive update
        e.value = e.value * (1.0 - lr * wd)
        e.m = b1 * e.m + (1.0 - b1) * e.grad
        e.v = b2 * e.v + (1.0 - b2) * e.grad * e.grad
        m_hat = e.m / (1.0 - b1 ** e.step)
        v_hat = e.v / (1.0 - b2 ** e.step)
        e.value = e.value - lr * m_hat / (np.sqrt(v_hat) + eps)
        e.grad = np.zeros_like(e.grad)
