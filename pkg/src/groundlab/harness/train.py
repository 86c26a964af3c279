"""Training loop: one optimizer step per scene batch."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import rng as seeds
from .. import tensor as T
from ..datagen import Corpus, augment_text, rotate_scene
from ..model import GroundingModel, collate
from .config import RunConfig
from .optim import AdamW, clip_grad_norm, learning_rate

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A non-finite loss was produced; the offending state was dumped."""


@dataclass
class TrainResult:
    model: GroundingModel
    log: list[dict] = field(default_factory=list)


def scene_batches(corpus: Corpus, cap: int) -> list[tuple[str, list[int]]]:
    """(scene id, referral indices) chunks of at most ``cap`` referrals."""
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(corpus.referrals):
        groups.setdefault(r.scene_id, []).append(i)
    out = []
    for sid in sorted(groups):
        idx = groups[sid]
        for s in range(0, len(idx), cap):
            out.append((sid, idx[s:s + cap]))
    return out


def _dump_state(out_dir: Path | None, record: dict, model: GroundingModel) -> str:
    from ..io import save_checkpoint

    if out_dir is None:
        return ""
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "diverged.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True, default=str))
    save_checkpoint(out_dir / "diverged.ckpt", model)
    return str(path)


def train(config: RunConfig, corpus: Corpus, out_dir: str | Path | None = None,
          model: GroundingModel | None = None) -> TrainResult:
    """Fit a fresh model (or continue ``model``) on ``corpus``.

    With ``out_dir`` set, writes ``train_log.jsonl`` and ``model.ckpt``.
    Everything random derives from ``config.seed``.
    """
    if len(corpus) == 0:
        raise ValueError("training corpus is empty")
    out_dir = Path(out_dir) if out_dir is not None else None
    model = model or GroundingModel(config)
    named = list(model.named_parameters())
    opt = AdamW(named, config.lr, (config.beta1, config.beta2), config.adam_eps,
                config.weight_decay, config.frozen)
    weights = config.loss_weights()
    batches = scene_batches(corpus, config.batch_cap)
    total_steps = config.epochs * len(batches)
    records: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = seeds.derive(config.seed, "order", epoch).permutation(len(batches))
        for bi in order:
            sid, idx = batches[int(bi)]
            scene = corpus.scenes[sid]
            if config.rotate_aug:
                angle = float(seeds.derive(config.seed, "rotate", epoch, int(bi)).uniform(0.0, 2 * math.pi))
                scene = rotate_scene(scene, angle)
            refs = [augment_text(corpus.referrals[i], seeds.derive_int(config.seed, "text", epoch, i),
                                 config.mask_p, config.synonym_p) for i in idx]
            batch = collate(refs, scene)
            lr = learning_rate(config.lr, step, total_steps, config.warmup_steps, config.lr_schedule)
            opt.zero_grad()
            inst = model.encode_scene(scene)
            out = model.forward(inst, batch)
            rep = model.losses(out, scene.centroids, batch, weights)
            record = {"step": step, "epoch": epoch, "scene": sid, "lr": lr, "batch": len(batch)}
            record.update(rep.as_dict())
            if not math.isfinite(record["total"]):
                where = _dump_state(out_dir, {**record, "referrals": [corpus.referrals[i].referral_id for i in idx]}, model)
                raise TrainingDiverged(f"non-finite loss at step {step} (state dumped to {where or 'nowhere'})")
            T.backward(rep.total)
            record["grad_norm"] = clip_grad_norm(model.parameters(), config.clip_norm)
            opt.step(lr)
            records.append(record)
            step += 1
        if records:
            tail = records[-len(batches):]
            log.info("epoch %d loss %.4f", epoch, float(np.mean([r["total"] for r in tail])))
    if out_dir is not None:
        from ..io import save_checkpoint, write_jsonl

        out_dir.mkdir(parents=True, exist_ok=True)
        write_jsonl(out_dir / "train_log.jsonl", records)
        save_checkpoint(out_dir / "model.ckpt", model, config)
    return TrainResult(model, records)
