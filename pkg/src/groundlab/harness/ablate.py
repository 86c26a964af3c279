"""Train-and-evaluate sweeps over the ablation switches, on shared seeds."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..datagen import Corpus, GenConfig, generate_corpus
from ..model import GroundingModel
from .config import RunConfig
from .evaluate import EvalReport, evaluate
from .train import train

log = logging.getLogger(__name__)

# each row adds one contribution to the one before
LADDER_ROWS: dict[str, dict] = {
    "baseline": dict(use_offset=False, use_tba_bidirectional=False, use_span=False),
    "+L_o": dict(use_offset=True, use_tba_bidirectional=False, use_span=False),
    "+L_o+TBA": dict(use_offset=True, use_tba_bidirectional=True, use_span=False),
    "full": dict(use_offset=True, use_tba_bidirectional=True, use_span=True),
}
FULL = LADDER_ROWS["full"]

MODES: dict[str, dict[str, dict]] = {
    "ladder": LADDER_ROWS,
    "span_vs_cls": {"full": FULL, "full/cls": {**FULL, "aux": "cls"}},
    "masking": {"full": FULL, "full/bottomup": {**FULL, "masking": "bottomup"}},
    "weights": {
        "full": FULL,
        **{f"w_o={w:g}": {**FULL, "w_o": w} for w in (0.1, 10.0)},
        **{f"w_sp={w:g}": {**FULL, "w_sp": w} for w in (0.1, 10.0)},
    },
}

REPORT_FIELDS = ("overall", "easy", "hard", "vdep", "vind", "mean_dist", "mean_dist_failures", "n_failures")


@dataclass
class AblationRow:
    name: str
    seed: int
    overrides: dict
    report: EvalReport
    seconds: float  # training plus evaluation, wall clock
    model: GroundingModel | None = field(default=None, repr=False)

    def flat(self) -> dict:
        out = {"name": self.name, "seed": self.seed, "seconds": round(self.seconds, 3)}
        out.update({k: getattr(self.report, k) for k in REPORT_FIELDS})
        return out


@dataclass
class AblationTable:
    rows: list[AblationRow] = field(default_factory=list)

    def names(self) -> list[str]:
        seen: list[str] = []
        for r in self.rows:
            if r.name not in seen:
                seen.append(r.name)
        return seen

    def mean(self, name: str, metric: str = "overall") -> float:
        vals = [getattr(r.report, metric) for r in self.rows if r.name == name]
        if not vals:
            raise KeyError(f"no rows named {name!r}")
        return float(np.mean(vals))

    def summary(self) -> dict[str, dict[str, float]]:
        return {n: {k: self.mean(n, k) for k in REPORT_FIELDS} for n in self.names()}

    def to_dict(self, timings: bool = False) -> dict:
        """Machine-readable table. Wall-clock timings are left out unless asked
        for, so that repeated runs serialize byte-identically."""
        rows = []
        for r in self.rows:
            row = {"name": r.name, "seed": r.seed, "overrides": r.overrides, "report": r.report.to_dict()}
            if timings:
                row["seconds"] = r.seconds
            rows.append(row)
        return {"rows": rows, "mean": self.summary()}

    def write(self, out_dir: str | Path, timings: bool = False) -> None:
        from ..io import write_json

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "ablation.json", self.to_dict(timings))
        with open(out / "ablation.csv", "w", newline="") as f:
            cols = ["name", "seed"] + (["seconds"] if timings else []) + list(REPORT_FIELDS)
            writer = csv.DictWriter(f, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            for r in self.rows:
                writer.writerow(r.flat())


def configurations(modes: list[str]) -> dict[str, dict]:
    """Union of the rows of every requested mode, in first-seen order."""
    out: dict[str, dict] = {}
    for m in modes:
        if m not in MODES:
            raise ValueError(f"unknown ablation mode {m!r}; choose from {sorted(MODES)}")
        for name, overrides in MODES[m].items():
            out.setdefault(name, overrides)
    return out


def benchmark(gen: GenConfig, config: RunConfig, seed: int) -> tuple[Corpus, Corpus]:
    return (generate_corpus(gen, seed, config.n_train, "train"),
            generate_corpus(gen, seed, config.n_eval, "eval"))


def ablate(base: RunConfig, gen: GenConfig, seeds: list[int], modes: list[str] = ("ladder",),
           out_dir: str | Path | None = None, keep_models: bool = False) -> AblationTable:
    """Train and evaluate every configuration of ``modes`` once per seed.

    For a given seed every configuration sees the same corpora and the same
    seed for initialisation, batching and augmentation. ``keep_models``
    keeps each trained model on its row.
    """
    rows = configurations(list(modes))
    table = AblationTable()
    for seed in seeds:
        train_set, eval_set = benchmark(gen, base, seed)
        for name, overrides in rows.items():
            cfg = replace(base, seed=seed, **overrides)
            start = time.perf_counter()
            result = train(cfg, train_set)
            report = evaluate(result.model, eval_set)
            elapsed = time.perf_counter() - start
            log.info("seed %d %-14s overall %.4f (%.0f s)", seed, name, report.overall, elapsed)
            table.rows.append(AblationRow(name, seed, dict(overrides), report, elapsed,
                                          result.model if keep_models else None))
            if out_dir is not None:
                table.write(out_dir)
    return table
