"""SGD with classical momentum and the cosine-annealed learning rate."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .autograd import Parameter
from .exceptions import ContractError


def cosine_lr(t: int, total: int, lr_max: float = 0.1, lr_min: float = 0.001) -> float:
    if total < 1:
        raise ContractError(f"total steps must be >= 1, got {total}")
    if not 0 <= t <= total:
        raise ContractError(f"step {t} outside [0, {total}]")
    return lr_min + (lr_max - lr_min) * (1.0 + math.cos(math.pi * t / total)) / 2.0


def sgd_momentum_step(p: Parameter, lr: float, mu: float = 0.9) -> None:
    """One classical-momentum update: ``v = mu*v + g``; ``theta -= lr*v``.

    The gradient buffer is zeroed afterwards.
    """
    if p.grad is None:
        raise ContractError(f"parameter {p.name or p.shape} has no gradient")
    p.momentum *= mu
    p.momentum += p.grad
    p.data -= lr * p.momentum
    p.grad = np.zeros_like(p.data)


def clip_grad_norm(params: Iterable[Parameter], max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping. ``max_norm <= 0`` disables clipping.
    """
    params = list(params)
    norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params if p.grad is not None))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class SGD:
    def __init__(self, params: Iterable[Parameter], momentum: float = 0.9):
        self.params = list(params)
        self.momentum = momentum

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        for p in self.params:
            sgd_momentum_step(p, lr, self.momentum)
