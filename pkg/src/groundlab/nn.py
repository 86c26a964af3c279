"""Parameter containers and the attention/feed-forward layers built on them."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Collects parameters from attributes in definition order.

    Attributes holding a parameter :class:`Tensor`, a :class:`Module`, or a
    list of modules are picked up; names are dotted attribute paths.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = np.ascontiguousarray(arr.copy())


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = T.parameter(glorot(rng, d_in, d_out))
        self.bias = T.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gamma = T.parameter(np.ones(d))
        self.beta = T.parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class FeedForward(Module):
    def __init__(self, rng: np.random.Generator, d: int, hidden: int):
        self.fc1 = Linear(rng, d, hidden)
        self.fc2 = Linear(rng, hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))


class _Head(Module):
    def __init__(self, rng: np.random.Generator, d: int, d_head: int):
        self.q = Linear(rng, d, d_head)
        self.k = Linear(rng, d, d_head)
        self.v = Linear(rng, d, d_head)


class Attention(Module):
    """Scaled dot-product attention with an optional additive mask.

    Each head owns separate q/k/v projections; head outputs are concatenated
    and mixed by one output projection. Queries and keys are batched
    ``(B, n, d)`` / ``(B, m, d)``; the mask is ``(n, m)`` or ``(B, n, m)``.
    """

    def __init__(self, rng: np.random.Generator, d: int, heads: int = 1):
        if d % heads:
            raise ValueError(f"model dim {d} is not divisible by {heads} heads")
        self.d_head = d // heads
        self.heads = [_Head(rng, d, self.d_head) for _ in range(heads)]
        self.out = Linear(rng, d, d)
        # last attention weights per head, kept for inspection
        self.last_weights: list[np.ndarray] = []

    def __call__(self, queries: Tensor, keys: Tensor, mask: np.ndarray | None = None) -> Tensor:
        scale = 1.0 / math.sqrt(self.d_head)
        outs = []
        self.last_weights = []
        for head in self.heads:
            q = head.q(queries)
            k = head.k(keys)
            v = head.v(keys)
            logits = T.scale(T.matmul(q, T.transpose(k)), scale)
            p = T.masked_softmax(logits, mask)
            self.last_weights.append(p.data)
            outs.append(T.matmul(p, v))
        mixed = outs[0] if len(outs) == 1 else T.concat_last_dim(outs)
        return self.out(mixed)
