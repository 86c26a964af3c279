"""Instance tokens from point clouds and word tokens from template ids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Attention, FeedForward, LayerNorm, Linear, Module
from .tensor import Tensor


@dataclass
class InstanceTokens:
    embeddings: Tensor      # (K, d + 6)
    centroids: np.ndarray   # (K, 3)


@dataclass
class WordTokens:
    embeddings: Tensor      # (B, W, d + 6)
    token_ids: np.ndarray   # (B, W)
    pad_mask: np.ndarray    # (B, W), True at padding


class PointEncoder(Module):
    """Per-point two-layer perceptron, 6 -> d -> d."""

    def __init__(self, rng: np.random.Generator, d: int):
        self.fc1 = Linear(rng, 6, d)
        self.fc2 = Linear(rng, d, d)

    def __call__(self, points) -> Tensor:
        pts = points if isinstance(points, Tensor) else T.constant(points)
        if pts.ndim != 2 or pts.shape[1] != 6 or pts.shape[0] < 1:
            raise T.ShapeError(f"points must be (N>=1, 6), got {pts.shape}")
        return self.fc2(T.relu(self.fc1(pts)))


def encode_points(encoder: PointEncoder, points) -> Tensor:
    return encoder(points)


def local_coordinates(points: np.ndarray, masks: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Copy of ``points`` with member xyz shifted to their instance center.

    The encoder then sees shape rather than room position; position re-enters
    through the centroid appended after pooling. Unowned points are left as is.
    """
    masks = np.asarray(masks, dtype=np.float64)
    if np.any(masks.sum(axis=0) > 1):
        raise ValueError("a point belongs to more than one instance")
    out = np.array(points, dtype=np.float64)
    out[:, :3] -= masks.T @ np.asarray(centroids, dtype=np.float64)
    return out


def pool_instances(features: Tensor, masks: np.ndarray, centroids: np.ndarray,
                   mean_colors: np.ndarray) -> InstanceTokens:
    """Mean-pool member-point features per instance and append center and color."""
    masks = np.asarray(masks, dtype=np.float64)
    counts = masks.sum(axis=1)
    if np.any(counts == 0):
        empty = [int(i) for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"empty instance masks: {empty}")
    if masks.shape[1] != features.shape[0]:
        raise T.ShapeError(f"masks {masks.shape} vs features {features.shape}")
    summed = T.matmul(T.constant(masks), features)
    inv = np.broadcast_to((1.0 / counts)[:, None], summed.shape)
    pooled = T.mul(summed, T.constant(inv))
    geo = np.hstack([np.asarray(centroids, dtype=np.float64), np.asarray(mean_colors, dtype=np.float64)])
    return InstanceTokens(T.concat_last_dim([pooled, T.constant(geo)]), np.asarray(centroids, dtype=np.float64))


def sinusoidal_encoding(length: int, d: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def key_padding_mask(pad_mask: np.ndarray, n_queries: int) -> np.ndarray:
    """(B, n_queries, W) additive mask that hides padded keys."""
    m = np.where(pad_mask, T.MASK_SENTINEL, 0.0)[:, None, :]
    return np.broadcast_to(m, (pad_mask.shape[0], n_queries, pad_mask.shape[1]))


class EncoderLayer(Module):
    """Post-norm transformer encoder layer."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, ffn: int):
        self.attn = Attention(rng, d, heads)
        self.norm1 = LayerNorm(d)
        self.ffn = FeedForward(rng, d, ffn)
        self.norm2 = LayerNorm(d)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        x = self.norm1(x + self.attn(x, x, mask))
        return self.norm2(x + self.ffn(x))


class WordEncoder(Module):
    """Embedding table, sinusoidal positions, self-attention layers, projection."""

    def __init__(self, rng: np.random.Generator, vocab_size: int, d_model: int,
                 layers: int = 2, heads: int = 1, ffn: int | None = None):
        self.vocab_size = vocab_size
        self.d_model = d_model
        # unit-variance rows so token identity outweighs the position code
        self.table = T.parameter(rng.normal(0.0, 1.0, (vocab_size, d_model)))
        self.layers = [EncoderLayer(rng, d_model, heads, ffn or 2 * d_model) for _ in range(layers)]
        self.proj = Linear(rng, d_model, d_model)

    def __call__(self, token_ids, pad_mask=None) -> WordTokens:
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise T.ShapeError(f"token ids must be (B, W>=1), got {ids.shape}")
        if ids.min() < 0 or ids.max() >= self.vocab_size:
            bad = sorted({int(i) for i in ids.ravel() if i < 0 or i >= self.vocab_size})
            raise ValueError(f"unknown token ids {bad} (vocabulary size {self.vocab_size})")
        pad = np.zeros(ids.shape, dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool).reshape(ids.shape)
        if np.any(pad.all(axis=1)):
            raise ValueError("a referral consists of padding only")
        b, w = ids.shape
        x = T.take_rows(self.table, ids)
        pe = np.broadcast_to(sinusoidal_encoding(w, self.d_model), (b, w, self.d_model))
        x = x + T.constant(pe)
        mask = key_padding_mask(pad, w)
        for layer in self.layers:
            x = layer(x, mask)
        return WordTokens(self.proj(x), ids, pad)


def encode_words(encoder: WordEncoder, token_ids, pad_mask=None) -> WordTokens:
    return encoder(token_ids, pad_mask)
