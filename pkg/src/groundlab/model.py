"""The full grounding network: encoders, fusion, heads and batch losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses as L
from . import rng as seeds
from . import tensor as T
from .datagen import Referral, Scene
from .encoders import InstanceTokens, PointEncoder, WordEncoder, local_coordinates, pool_instances
from .fusion import FusionOutput, TBAFusion
from .nn import Linear, Module
from .vocab import CLASSES, VOCAB


@dataclass
class Batch:
    """Referrals over one scene, padded to a common length."""

    token_ids: np.ndarray   # (B, W)
    pad_mask: np.ndarray    # (B, W)
    spans: np.ndarray       # (B, W)
    targets: np.ndarray     # (B,)
    target_classes: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.targets)


def collate(referrals: list[Referral], scene: Scene, pad_id: int = VOCAB.pad_id) -> Batch:
    w = max(len(r.tokens) for r in referrals)
    b = len(referrals)
    ids = np.full((b, w), pad_id, dtype=np.int64)
    pad = np.ones((b, w), dtype=bool)
    spans = np.zeros((b, w))
    for i, r in enumerate(referrals):
        n = len(r.tokens)
        ids[i, :n] = r.tokens
        pad[i, :n] = False
        spans[i, :n] = r.span
    targets = np.array([r.target for r in referrals], dtype=np.int64)
    return Batch(ids, pad, spans, targets, scene.instance_class[targets].astype(np.int64))


class GroundingModel(Module):
    def __init__(self, config, vocab_size: int = len(VOCAB), n_classes: int = len(CLASSES)):
        rng = seeds.derive(config.seed, "init")
        dm = config.d_model
        self.config = config
        self.point_encoder = PointEncoder(rng, config.d)
        self.word_encoder = WordEncoder(rng, vocab_size, dm, config.lang_layers, config.heads,
                                        config.ffn_mult * dm)
        self.fusion = TBAFusion(rng, dm, config.blocks, config.heads, config.ffn_mult * dm,
                                bidirectional=config.use_tba_bidirectional)
        self.cls_head = Linear(rng, dm, n_classes) if config.aux == "cls" else None

    def encode_scene(self, scene: Scene) -> InstanceTokens:
        # points outside every instance (the floor) cannot reach any token
        owned = scene.instance_masks.sum(axis=0) > 0
        masks = scene.instance_masks[:, owned]
        local = local_coordinates(scene.points[owned], masks, scene.centroids)
        return pool_instances(self.point_encoder(local), masks, scene.centroids, scene.mean_colors)

    def forward(self, instances: InstanceTokens, batch: Batch, use_masks: bool = True) -> FusionOutput:
        words = self.word_encoder(batch.token_ids, batch.pad_mask)
        return self.fusion(instances, words, self.config.schedule(), use_masks)

    def class_logits(self, out: FusionOutput) -> T.Tensor:
        pooled = T.mean_pool_rows(out.words, ~out.pad_mask)
        return self.cls_head(pooled)

    def losses(self, out: FusionOutput, centroids: np.ndarray, batch: Batch,
               weights: L.LossWeights) -> L.LossReport:
        rep = L.LossReport(
            selection=L.selection_loss(out.selection_logits, batch.targets),
            offset_blocks=[L.offset_loss(o, centroids, batch.targets, self.config.offset_reduction)
                           for o in out.offsets],
            span=L.span_loss(out.span_logits, batch.spans, batch.pad_mask),
        )
        if self.cls_head is not None:
            rep.cls = L.cls_loss(self.class_logits(out), batch.target_classes)
        L.combine(rep, weights)
        return rep
