"""First-order parameter updates."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def _check_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name or p!r} has no gradient")


def sgd_step(params: Sequence[Tensor], learning_rate: float) -> None:
    """Plain gradient descent: ``theta -= lr * grad``, then clear gradients."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    _check_grads(params)
    for p in params:
        p.data -= learning_rate * p.grad
        p.grad = None


class SGD:
    def __init__(self, params: Sequence[Tensor], learning_rate: float):
        self.params = list(params)
        self.learning_rate = learning_rate

    def step(self) -> None:
        sgd_step(self.params, self.learning_rate)


class Adam:
    """Adam with bias correction (defaults of Kingma & Ba)."""

    def __init__(
        self,
        params: Sequence[Tensor],
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        _check_grads(self.params)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None


def make_optimizer(name: str, params: Sequence[Tensor], learning_rate: float):
    if name == "sgd":
        return SGD(params, learning_rate)
    if name == "adam":
        return Adam(params, learning_rate)
    raise ValueError(f"unknown optimizer {name!r}")
