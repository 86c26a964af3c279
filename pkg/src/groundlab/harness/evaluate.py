"""Accuracy by split, localisation error, and multi-view ensembling."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .. import tensor as T
from ..datagen import Corpus, rotate_scene
from ..fusion import predict
from ..model import GroundingModel, collate
from .train import scene_batches


@dataclass
class EvalReport:
    overall: float
    easy: float
    hard: float
    vdep: float
    vind: float
    n: int
    n_easy: int
    n_hard: int
    n_vdep: int
    n_vind: int
    mean_dist: float
    mean_dist_failures: float
    n_failures: int

    def to_dict(self) -> dict:
        return asdict(self)


def _acc(correct: np.ndarray, sel: np.ndarray) -> tuple[float, int]:
    n = int(sel.sum())
    return (float(correct[sel].sum()) / n if n else 0.0), n


def report_from_predictions(corpus: Corpus, preds: dict[str, int]) -> EvalReport:
    """Score ``referral_id -> predicted instance`` against the corpus labels.

    Accuracies of empty splits and the failure distance with no failures are
    reported as 0.
    """
    refs = corpus.referrals
    correct = np.array([preds[r.referral_id] == r.target for r in refs])
    easy = np.array([r.difficulty == "easy" for r in refs])
    vdep = np.array([bool(r.view_dependent) for r in refs])
    dist = np.array([
        float(np.linalg.norm(corpus.scenes[r.scene_id].centroids[preds[r.referral_id]]
                             - corpus.scenes[r.scene_id].centroids[r.target]))
        for r in refs
    ])
    every = np.ones(len(refs), dtype=bool)
    overall, n = _acc(correct, every)
    e, ne = _acc(correct, easy)
    h, nh = _acc(correct, ~easy)
    vd, nvd = _acc(correct, vdep)
    vi, nvi = _acc(correct, ~vdep)
    fail = ~correct
    return EvalReport(
        overall=overall, easy=e, hard=h, vdep=vd, vind=vi,
        n=n, n_easy=ne, n_hard=nh, n_vdep=nvd, n_vind=nvi,
        mean_dist=float(dist.mean()) if n else 0.0,
        mean_dist_failures=float(dist[fail].mean()) if fail.any() else 0.0,
        n_failures=int(fail.sum()),
    )


def selection_logits(model: GroundingModel, corpus: Corpus, angle: float = 0.0) -> dict[str, np.ndarray]:
    """Per-referral selection logits with every scene rotated by ``angle`` about z."""
    out: dict[str, np.ndarray] = {}
    with T.no_grad():
        for sid, idx in scene_batches(corpus, model.config.batch_cap):
            scene = corpus.scenes[sid]
            if angle:
                scene = rotate_scene(scene, angle)
            refs = [corpus.referrals[i] for i in idx]
            res = model.forward(model.encode_scene(scene), collate(refs, scene))
            for r, row in zip(refs, res.selection_logits.data):
                out[r.referral_id] = row.copy()
    return out


def evaluate(model: GroundingModel, corpus: Corpus) -> EvalReport:
    logits = selection_logits(model, corpus)
    return report_from_predictions(corpus, {k: predict(v) for k, v in logits.items()})


def majority_vote(votes: list[int], logit_sums: np.ndarray) -> int:
    """Most frequent index; ties go to the larger summed logit, then the lower index."""
    counts = np.bincount(np.asarray(votes, dtype=np.int64), minlength=len(logit_sums))
    tied = np.flatnonzero(counts == counts.max())
    return int(tied[np.argmax(logit_sums[tied])])


def mve_predictions(model: GroundingModel, corpus: Corpus, views: int) -> dict[str, int]:
    if views < 1:
        raise ValueError(f"need at least one view, got {views}")
    per_view = [selection_logits(model, corpus, 2 * math.pi * j / views) for j in range(views)]
    preds = {}
    for r in corpus.referrals:
        rows = [v[r.referral_id] for v in per_view]
        preds[r.referral_id] = majority_vote([predict(row) for row in rows], np.sum(rows, axis=0))
    return preds


def mve(model: GroundingModel, corpus: Corpus, views: int = 9) -> EvalReport:
    """Majority vote over ``views`` copies rotated by evenly spaced angles in [0, 2 pi)."""
    return report_from_predictions(corpus, mve_predictions(model, corpus, views))


OFFSET_COLUMNS = ("scene_id", "referral_id", "block", "instance", "ox", "oy", "oz")


def export_offsets(model: GroundingModel, corpus: Corpus, path: str | Path) -> int:
    """Write every block's predicted offsets to CSV; returns the number of rows.

    Values use ``repr`` so they read back as the exact float64.
    """
    n = 0
    with open(path, "w", newline="") as f, T.no_grad():
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(OFFSET_COLUMNS)
        for sid, idx in scene_batches(corpus, model.config.batch_cap):
            scene = corpus.scenes[sid]
            refs = [corpus.referrals[i] for i in idx]
            out = model.forward(model.encode_scene(scene), collate(refs, scene))
            for block, off in enumerate(out.offsets):
                for b, r in enumerate(refs):
                    for k, (ox, oy, oz) in enumerate(off.data[b]):
                        writer.writerow([sid, r.referral_id, block, k, repr(float(ox)), repr(float(oy)), repr(float(oz))])
                        n += 1
    return n
