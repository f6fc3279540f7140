"""Adam optimizer and the training configuration shared by both trainers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from softvc.errors import ConfigError


@dataclass
class TrainConfig:
    learning_rate: float = 2e-5
    steps: int = 25000
    batch_frames: int = 256
    seed: int = 42
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.batch_frames < 1:
            raise ConfigError("batch_frames must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")


class Adam:
    """Adam with bias correction over a dict of float64 arrays, updated in place."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    @classmethod
    def from_config(cls, params, config: TrainConfig) -> "Adam":
        return cls(params, config.learning_rate, config.beta1, config.beta2, config.eps)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        if self.lr == 0:
            return
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def epoch_batches(n: int, batch: int, rng: np.random.Generator):
    """Endless stream of index batches drawn from seeded per-epoch permutations."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch):
            yield order[start:start + batch]
