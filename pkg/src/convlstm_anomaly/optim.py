"""Gradient-descent optimizers over lists of parameter tensors.

All three update rules read `p.grad` (missing gradients count as zero)
and mutate `p.data` in place. State tensors shape-match their parameters.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .tensor import Tensor


class Optimizer:
    def __init__(self, params: list[Tensor], lr: float):
        if lr <= 0:
            raise ConfigError("learning rate must be positive")
        self.params = list(params)
        self.lr = lr

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def _grad(self, p: Tensor) -> np.ndarray:
        return p.grad if p.grad is not None else np.zeros_like(p.data)

    def step(self):
        raise NotImplementedError


class RMSProp(Optimizer):
    """cache <- decay*cache + (1-decay)*g^2; p <- p - lr*g/(sqrt(cache)+eps)."""

    def __init__(self, params, lr=1e-4, decay=0.9, eps=1e-8):
        super().__init__(params, lr)
        if not 0 < decay < 1:
            raise ConfigError("decay must be in (0, 1)")
        self.decay = decay
        self.eps = eps
        self.cache = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, cache in zip(self.params, self.cache):
            g = self._grad(p)
            cache *= self.decay
            cache += (1.0 - self.decay) * g * g
            p.data -= self.lr * g / (np.sqrt(cache) + self.eps)


class Adagrad(Optimizer):
    """accum <- accum + g^2; p <- p - lr*g/(sqrt(accum)+eps)."""

    def __init__(self, params, lr=1e-4, eps=1e-8):
        super().__init__(params, lr)
        self.eps = eps
        self.accum = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, accum in zip(self.params, self.accum):
            g = self._grad(p)
            accum += g * g
            p.data -= self.lr * g / (np.sqrt(accum) + self.eps)


class Adam(Optimizer):
    """Bias-corrected first/second moment estimates."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self.m, self.v):
            g = self._grad(p)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


OPTIMIZERS = {"rmsprop": RMSProp, "adagrad": Adagrad, "adam": Adam}


def make_optimizer(kind: str, params, lr: float, decay: float = 0.9) -> Optimizer:
    if kind not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {kind!r}; choose from {sorted(OPTIMIZERS)}")
    if kind == "rmsprop":
        return RMSProp(params, lr=lr, decay=decay)
    return OPTIMIZERS[kind](params, lr=lr)
