"""SGD with momentum and coupled L2 weight decay, plus the cosine schedule."""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ShapeError, Tensor


class SGDMomentum:
    """Per-parameter velocity buffers with the classic update rule.

    g' = g + weight_decay * p
    v  = momentum * v + g'
    p  = p - lr * v
    """

    def __init__(self, params, momentum: float = 0.9, weight_decay: float = 5e-4):
        self.params = list(params)
        self.momentum = float(momentum)
        self.weight_decay = float(weight_decay)
        self.velocities = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float):
        if lr < 0:
            raise ValueError(f"negative learning rate {lr}")
        for p, v in zip(self.params, self.velocities):
            if p.grad is None:
                continue
            if p.grad.shape != p.data.shape:
                raise ShapeError(f"grad shape {p.grad.shape} != param shape {p.data.shape}")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data -= lr * v

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def sgd_momentum_step(param: Tensor, velocity: np.ndarray, lr: float,
                      momentum: float = 0.9, weight_decay: float = 5e-4) -> np.ndarray:
    """Single-parameter form of the update; returns the new velocity."""
    if param.grad is None:
        raise ValueError("parameter has no gradient")
    if velocity.shape != param.data.shape or param.grad.shape != param.data.shape:
        raise ShapeError("param/grad/velocity shapes differ")
    g = param.grad + weight_decay * param.data
    velocity = momentum * velocity + g
    param.data -= lr * velocity
    return velocity


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Half-cosine decay from base_lr at epoch 0 to exactly 0 at total_epochs."""
    if total_epochs < 1:
        raise ValueError(f"total_epochs must be >= 1, got {total_epochs}")
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))
