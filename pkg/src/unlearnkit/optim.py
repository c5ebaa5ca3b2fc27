"""SGD with momentum and decoupled-from-nothing weight decay (classic L2-in-grad)."""

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError


@dataclass
class OptimConfig:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs: int = 1
    batch_size: int = 32
    label_smoothing: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ArgumentError("lr must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ArgumentError("momentum must be in [0, 1)")
        if self.epochs < 0:
            raise ArgumentError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ArgumentError("batch_size must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise ArgumentError("label_smoothing must be in [0, 1)")


class SgdMomentum:
    """v <- mu*v + (g + wd*theta); theta <- theta - lr*v  (heavy-ball form)."""

    def __init__(self, state, lr, momentum=0.9, weight_decay=0.0):
        self.lr = np.float32(lr)
        self.momentum = np.float32(momentum)
        self.weight_decay = np.float32(weight_decay)
        self.velocity = [
            {k: np.zeros_like(v, dtype=np.float32) for k, v in g.items()} for g in state.params
        ]

    def step(self, state, grads):
        for group, vel, grad in zip(state.params, self.velocity, grads):
            for key in group:
                g = grad[key].astype(np.float32)
                if self.weight_decay:
                    g = g + self.weight_decay * group[key]
                vel[key] *= self.momentum
                vel[key] += g
                group[key] -= self.lr * vel[key]
