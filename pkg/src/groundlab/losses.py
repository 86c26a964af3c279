"""Selection, offset, span and sentence-class objectives.

Each loss takes a single referral (1-D logits / (K, 3) offsets) or a batch
with a leading axis, and returns the batch mean as a scalar tensor.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class LossWeights:
    selection: float = 1.0
    offset: float = 1.0
    span: float = 1.0
    cls: float = 0.0

    def __post_init__(self):
        for name, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {v}")


@dataclass
class LossReport:
    selection: Tensor
    offset_blocks: list[Tensor]
    span: Tensor | None = None
    cls: Tensor | None = None
    total: Tensor | None = field(default=None)

    @property
    def offset(self) -> float:
        return float(sum(t.item() for t in self.offset_blocks))

    def as_dict(self) -> dict:
        return {
            "total": self.total.item() if self.total is not None else None,
            "selection": self.selection.item(),
            "offset": self.offset,
            "offset_blocks": [t.item() for t in self.offset_blocks],
            "span": self.span.item() if self.span is not None else None,
            "cls": self.cls.item() if self.cls is not None else None,
        }


def _batched(x: Tensor, ndim: int) -> Tensor:
    return T.reshape(x, (1,) + x.shape) if x.ndim == ndim - 1 else x


def selection_loss(logits: Tensor, target) -> Tensor:
    """Cross-entropy of softmax(logits) against the target instance."""
    u = _batched(logits, 2)
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    k = u.shape[1]
    if np.any(t < 0) or np.any(t >= k):
        raise IndexError(f"target {t.tolist()} out of range for {k} instances")
    return T.cross_entropy(u, t)


def offset_targets(centroids: np.ndarray, target) -> np.ndarray:
    """(B, K, 3) supervision ``c_i - c_target`` for each referral."""
    c = np.asarray(centroids, dtype=np.float64)
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    return c[None, :, :] - c[t][:, None, :]


def offset_loss(offsets: Tensor, centroids: np.ndarray, target, reduction: str = "mean") -> Tensor:
    """Euclidean distance between predicted and true offsets, averaged over instances.

    ``reduction="sum"`` sums over instances instead. Batches are averaged.
    """
    o = _batched(offsets, 3)
    t = np.atleast_1d(np.asarray(target, dtype=np.int64))
    b, k, _ = o.shape
    if np.any(t < 0) or np.any(t >= k):
        raise IndexError(f"target {t.tolist()} out of range for {k} instances")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")
    dist = T.l2_norm_rows(T.sub(o, T.constant(offset_targets(centroids, t))))
    per = 1.0 / b if reduction == "sum" else 1.0 / (b * k)
    return T.weighted_sum(dist, np.full((b, k), per))


def span_loss(span_logits: Tensor, labels, pad_mask=None) -> Tensor:
    """Binary cross-entropy with logits, averaged over each referral's real tokens."""
    s = _batched(span_logits, 2)
    y = np.asarray(labels, dtype=np.float64).reshape(s.shape)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("span labels must be binary")
    pad = np.zeros(s.shape, dtype=bool) if pad_mask is None else np.asarray(pad_mask, dtype=bool).reshape(s.shape)
    real = (~pad).astype(np.float64)
    counts = real.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ValueError("span loss needs at least one non-pad token per referral")
    weights = real / counts / s.shape[0]
    return T.bce_with_logits(s, np.where(pad, 0.0, y), weights)


def cls_loss(class_logits: Tensor, target_class) -> Tensor:
    """Sentence-level cross-entropy on the target's semantic class."""
    return T.cross_entropy(_batched(class_logits, 2), np.atleast_1d(target_class))


def combine(report: LossReport, weights: LossWeights) -> Tensor:
    """Weighted total; terms with zero weight are left out of the graph."""
    terms = []
    if weights.selection:
        terms.append(T.scale(report.selection, weights.selection))
    if weights.offset:
        for t in report.offset_blocks:
            terms.append(T.scale(t, weights.offset))
    if weights.span and report.span is not None:
        terms.append(T.scale(report.span, weights.span))
    if weights.cls and report.cls is not None:
        terms.append(T.scale(report.cls, weights.cls))
    if not terms:
        total = T.constant(np.array(0.0))
    else:
        total = terms[0]
        for t in terms[1:]:
            total = T.add(total, t)
    report.total = total
    return total
