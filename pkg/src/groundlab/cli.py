"""Command line: ``groundlab generate|train|eval|ablate|mve|gradcheck``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import io
from .datagen import generate_corpus
from .harness.ablate import MODES, ablate
from .harness.config import load_config
from .harness.evaluate import evaluate, export_offsets, mve
from .harness.gradcheck import gradcheck
from .harness.train import TrainingDiverged, train

log = logging.getLogger("groundlab")


def _configs(args):
    return load_config(args.config, seed=args.seed)


def _corpus(args, run, gen, split: str, count: int):
    if getattr(args, "corpus", None):
        return io.load_corpus(args.corpus)
    return generate_corpus(gen, run.seed, count, split)


def cmd_generate(args) -> int:
    run, gen = _configs(args)
    count = args.count if args.count is not None else (run.n_train if args.split == "train" else run.n_eval)
    corpus = generate_corpus(gen, run.seed, count, args.split)
    io.save_corpus(args.out, corpus)
    log.info("wrote %d referrals over %d scenes to %s", len(corpus), len(corpus.scenes), args.out)
    return 0


def cmd_train(args) -> int:
    run, gen = _configs(args)
    corpus = _corpus(args, run, gen, "train", run.n_train)
    try:
        train(run, corpus, args.out)
    except TrainingDiverged as e:
        log.error("%s", e)
        return 1
    log.info("checkpoint and log written to %s", args.out)
    return 0


def _load(args):
    model = io.load_model(args.checkpoint)
    run = model.config
    if args.seed is not None:
        run = run.__class__.from_dict({**run.to_dict(), "seed": args.seed})
    _, gen = load_config(args.config)
    return model, run, gen


def cmd_eval(args) -> int:
    model, run, gen = _load(args)
    corpus = _corpus(args, run, gen, "eval", run.n_eval)
    report = evaluate(model, corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "eval.json", report.to_dict())
    if args.offsets:
        export_offsets(model, corpus, out / "offsets.csv")
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def cmd_mve(args) -> int:
    model, run, gen = _load(args)
    corpus = _corpus(args, run, gen, "eval", run.n_eval)
    views = args.views if args.views is not None else run.mve_views
    report = mve(model, corpus, views)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / f"mve{views}.json", report.to_dict())
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


def ladder_failures(table) -> list[str]:
    """Directional checks on a table that holds the four ladder rows."""
    m = {n: table.mean(n) for n in ("baseline", "+L_o", "+L_o+TBA", "full")}
    failures = []
    if not m["full"] >= m["+L_o+TBA"] >= m["+L_o"] >= m["baseline"]:
        failures.append(f"ordering violated: {m}")
    if not m["full"] >= m["baseline"] + 0.05:
        failures.append(f"full {m['full']:.4f} is not 5 points above baseline {m['baseline']:.4f}")
    return failures


def cmd_ablate(args) -> int:
    run, gen = _configs(args)
    seeds = [run.seed + i for i in range(args.n_seeds)]
    table = ablate(run, gen, seeds, args.mode, args.out)
    table.write(args.out, timings=args.timings)
    for name, row in table.summary().items():
        print(f"{name:14s} overall {row['overall']:.4f}  failure dist {row['mean_dist_failures']:.3f}")
    if args.check and "ladder" in args.mode:
        failures = ladder_failures(table)
        for f in failures:
            log.error("%s", f)
        return 1 if failures else 0
    return 0


def cmd_gradcheck(args) -> int:
    run, _ = load_config(args.config, seed=args.seed, d=args.d)
    reports = [gradcheck(run, seed=run.seed + i) for i in range(args.n_seeds)]
    for i, r in enumerate(reports):
        status = "ok" if r.passed else "FAIL " + ",".join(r.failed)
        print(f"seed {run.seed + i}: max rel err {r.max_rel_error:.3e} ({r.worst_parameter}) "
              f"{r.seconds:.1f}s kinks {r.kinks} {status}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        io.write_json(out / "gradcheck.json", [r.to_dict() for r in reports])
    return 0 if all(r.passed for r in reports) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="groundlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="flat TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=out_required, help="output directory")
        return p

    p = common(sub.add_parser("generate", help="write a synthetic corpus"))
    p.add_argument("--count", type=int, default=None, help="number of referrals")
    p.add_argument("--split", default="train", help="split name used in scene ids and seeds")
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("train", help="train a model"))
    p.add_argument("--corpus", help="corpus directory (default: generate from the seed)")
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", help="corpus directory (default: generate the eval split)")
    p.add_argument("--offsets", action="store_true", help="also write per-block offsets CSV")
    p.set_defaults(func=cmd_eval)

    p = common(sub.add_parser("mve", help="multi-view ensembled evaluation"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p.add_argument("--views", type=int, default=None)
    p.set_defaults(func=cmd_mve)

    p = common(sub.add_parser("ablate", help="train and evaluate ablation configurations"))
    p.add_argument("--mode", nargs="+", default=["ladder"], choices=sorted(MODES))
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--check", action="store_true", help="exit 1 if the ladder ordering fails")
    p.add_argument("--timings", action="store_true", help="include wall-clock seconds in the table")
    p.set_defaults(func=cmd_ablate)

    p = common(sub.add_parser("gradcheck", help="finite-difference check of every parameter"), out_required=False)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--d", type=int, default=8, help="model width for the check")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    with threadpool_limits(1):
        try:
            return args.func(args)
        except (KeyError, ValueError, FileNotFoundError, io.FormatError) as e:
            log.error("%s", e)
            return 2


if __name__ == "__main__":
    sys.exit(main())
