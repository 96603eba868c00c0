"""Gradient-descent optimizers over lists of leaf tensors."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class Optimizer:
    def __init__(self, params: Sequence[Tensor]):
        self.params = [p for p in params if p.requires_grad]
        self.step_count = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adadelta(Optimizer):
    """Adadelta (Zeiler, 2012) with a multiplicative learning rate."""

    def __init__(self, params, lr: float = 0.3, rho: float = 0.9, eps: float = 1e-6):
        super().__init__(params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self._sq_grad = [np.zeros_like(p.data) for p in self.params]
        self._sq_delta = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        rho, eps = self.rho, self.eps
        for p, sq_g, sq_d in zip(self.params, self._sq_grad, self._sq_delta):
            if p.grad is None:
                continue
            g = p.grad
            sq_g *= rho
            sq_g += (1 - rho) * g * g
            delta = np.sqrt(sq_d + eps) / np.sqrt(sq_g + eps) * g
            sq_d *= rho
            sq_d += (1 - rho) * delta * delta
            p.data -= (self.lr * delta).astype(p.data.dtype)
        self.step_count += 1


class Adam(Optimizer):
    """Adam with bias correction; ``lr_schedule(step)`` is queried before each update."""

    def __init__(
        self,
        params,
        lr_schedule: Callable[[int], float],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(params)
        self.lr_schedule = lr_schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    @property
    def lr(self) -> float:
        return self.lr_schedule(self.step_count)

    def step(self) -> None:
        lr = self.lr_schedule(self.step_count)
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1**self.step_count
        c2 = 1 - b2**self.step_count
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)
