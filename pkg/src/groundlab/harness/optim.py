"""AdamW with decoupled weight decay and per-group learning rates."""

from __future__ import annotations

import math

import numpy as np

from ..tensor import Tensor


class AdamW:
    """Adam moments plus ``p -= lr * decay * p`` applied outside the moments.

    Parameters whose name starts with one of ``frozen`` form a group with
    learning rate 0: they still get gradients but never move.
    """

    def __init__(self, named_params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01, frozen: tuple[str, ...] = ()):
        self.params: list[tuple[str, Tensor]] = list(named_params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.scale = {name: 0.0 if any(name.startswith(f) for f in frozen) else 1.0
                      for name, _ in self.params}
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}
        self.t = 0

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            step_lr = lr * self.scale[name]
            if step_lr == 0.0:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data *= 1.0 - step_lr * self.weight_decay
            p.data -= step_lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping; ``max_norm <= 0`` only measures it.
    """
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


def learning_rate(base: float, step: int, total: int, warmup: int, schedule: str) -> float:
    """Linear warm-up, then constant or cosine decay to zero."""
    if warmup and step < warmup:
        return base * (step + 1) / warmup
    if schedule == "cosine" and total > warmup:
        frac = min(1.0, (step - warmup) / max(1, total - warmup))
        return base * 0.5 * (1.0 + math.cos(math.pi * frac))
    return base
