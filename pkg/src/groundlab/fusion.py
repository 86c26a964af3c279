"""Top-down bidirectional attentive fusion of instance and word tokens."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import InstanceTokens, WordTokens, key_padding_mask
from .nn import Attention, FeedForward, LayerNorm, Linear, Module
from .tensor import Tensor

INF = math.inf


def spherical_mask(centroids: np.ndarray, r: float) -> np.ndarray:
    """Additive (K, K) mask: 0 where centroid distance < r, sentinel elsewhere.

    The diagonal is always open since every instance is at distance 0 from
    itself. ``r = inf`` gives global attention.
    """
    c = np.asarray(centroids, dtype=np.float64)
    k = c.shape[0]
    if math.isinf(r) and r > 0:
        return np.zeros((k, k))
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    diff = c[:, None, :] - c[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))
    mask = np.where(dist < r, 0.0, T.MASK_SENTINEL)
    np.fill_diagonal(mask, 0.0)
    return mask


@dataclass(frozen=True)
class RadiusSchedule:
    radii: tuple[float, ...]
    topdown: bool = True

    def __post_init__(self):
        if not self.radii:
            raise ValueError("a radius schedule needs at least one block")
        if any(not r > 0 for r in self.radii):
            raise ValueError(f"radii must be positive: {self.radii}")
        pairs = list(zip(self.radii, self.radii[1:]))
        if self.topdown and any(b > a for a, b in pairs):
            raise ValueError(f"top-down schedule must be non-increasing, got {list(self.radii)}")
        if not self.topdown and any(b < a for a, b in pairs):
            raise ValueError(f"bottom-up schedule must be non-decreasing, got {list(self.radii)}")

    def reversed(self) -> RadiusSchedule:
        return RadiusSchedule(tuple(reversed(self.radii)), not self.topdown)

    def __len__(self) -> int:
        return len(self.radii)


@dataclass
class FusionOutput:
    selection_logits: Tensor        # (B, K)
    offsets: list[Tensor]           # per block, (B, K, 3)
    span_logits: Tensor             # (B, W)
    instances: Tensor               # (B, K, D)
    words: Tensor                   # (B, W, D)
    pad_mask: np.ndarray            # (B, W)


class TBABlock(Module):
    """Masked instance self-attention, then cross-attention both ways, then FFNs.

    With ``bidirectional=False`` the word stream never reads from instances.
    """

    def __init__(self, rng: np.random.Generator, d: int, heads: int = 1, ffn: int | None = None,
                 bidirectional: bool = True):
        ffn = ffn or 2 * d
        self.bidirectional = bidirectional
        self.self_attn = Attention(rng, d, heads)
        self.inst_from_words = Attention(rng, d, heads)
        self.words_from_inst = Attention(rng, d, heads) if bidirectional else None
        self.inst_ffn = FeedForward(rng, d, ffn)
        self.word_ffn = FeedForward(rng, d, ffn)
        self.inst_norm = LayerNorm(d)
        self.word_norm = LayerNorm(d)
        self.offset_head = Linear(rng, d, 3)

    def __call__(self, inst: Tensor, words: Tensor, inst_mask: np.ndarray | None,
                 word_mask: np.ndarray | None) -> tuple[Tensor, Tensor, Tensor]:
        x = inst + self.self_attn(inst, inst, inst_mask)
        x = x + self.inst_from_words(x, words, word_mask)
        w = words
        if self.words_from_inst is not None:
            w = w + self.words_from_inst(w, x, None)
        x = self.inst_norm(x + self.inst_ffn(x))
        w = self.word_norm(w + self.word_ffn(w))
        return x, w, self.offset_head(x)


class TBAFusion(Module):
    def __init__(self, rng: np.random.Generator, d: int, blocks: int = 3, heads: int = 1,
                 ffn: int | None = None, bidirectional: bool = True):
        self.blocks = [TBABlock(rng, d, heads, ffn, bidirectional) for _ in range(blocks)]
        self.selection_head = Linear(rng, d, 1)
        self.span_head = Linear(rng, d, 1)

    def __call__(self, instances: InstanceTokens, words: WordTokens, schedule: RadiusSchedule,
                 use_masks: bool = True) -> FusionOutput:
        return run_tba(self, instances, words, schedule, use_masks)


def run_tba(fusion: TBAFusion, instances: InstanceTokens, words: WordTokens,
            schedule: RadiusSchedule, use_masks: bool = True) -> FusionOutput:
    """Apply every block in order; masks always come from the input centroids.

    ``use_masks=False`` drops the spherical masks entirely (reference path).
    """
    if len(schedule) != len(fusion.blocks):
        raise ValueError(f"{len(schedule)} radii for {len(fusion.blocks)} blocks")
    w = words.embeddings
    b = w.shape[0]
    x = instances.embeddings
    if x.ndim == 2:
        x = T.expand_batch(x, b)
    if x.shape[0] != b or x.shape[-1] != w.shape[-1]:
        raise T.ShapeError(f"instance tokens {x.shape} vs word tokens {w.shape}")
    k = x.shape[1]
    word_mask = key_padding_mask(words.pad_mask, k)
    offsets = []
    for block, r in zip(fusion.blocks, schedule.radii):
        mask = spherical_mask(instances.centroids, r) if use_masks else None
        x, w, off = block(x, w, mask, word_mask)
        offsets.append(off)
    sel = T.reshape(fusion.selection_head(x), (b, k))
    span = T.reshape(fusion.span_head(w), (b, w.shape[1]))
    return FusionOutput(sel, offsets, span, x, w, words.pad_mask)


def predict(logits) -> np.ndarray | int:
    """Argmax over instances; ties go to the lowest index.

    Accepts a :class:`FusionOutput`, a tensor, or an array of shape (K,) or (B, K).
    """
    if isinstance(logits, FusionOutput):
        logits = logits.selection_logits
    if isinstance(logits, Tensor):
        logits = logits.data
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim == 1:
        return int(np.argmax(arr))
    return np.argmax(arr, axis=-1)
