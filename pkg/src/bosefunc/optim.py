"""Adaptive-moment updates with decoupled weight decay."""

from __future__ import annotations

import numpy as np


class AdamW:
    """Adam on a flat parameter vector; ``weight_decay=0`` gives plain Adam.

    The decay is applied as ``x <- x * (1 - lr * weight_decay)`` before the
    moment step, as in PyTorch's ``AdamW``.
    """

    def __init__(self, size: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, x: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        x = x * (1.0 - self.lr * self.weight_decay)
        return x - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
