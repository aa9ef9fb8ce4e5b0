"""Adaptive-moment optimizer and the warmup-linear learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def warmup_linear(step: int, total: int, warmup_ratio: float) -> float:
    """Multiplier ramping 0 -> 1 over the warmup steps, then linearly to 0.

    ``step`` counts from 0; the multiplier is 0 at step 0 and at ``total``.
    """
    if total <= 0:
        return 0.0
    warm = math.ceil(warmup_ratio * total)
    if step <= 0 or step >= total:
        return 0.0
    if warm > 0 and step <= warm:
        return step / warm
    return (total - step) / (total - warm)


@dataclass
class Adam:
    """Adam state for one flat parameter vector."""

    size: object  # int or shape tuple
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """Return updated parameters; the optimizer state advances in place."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def copy(self) -> "Adam":
        return Adam(self.size, self.beta1, self.beta2, self.eps, self.t,
                    self.m.copy(), self.v.copy())
