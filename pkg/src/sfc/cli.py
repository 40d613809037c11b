"""Command-line front end: ``sfc <command> [--config PATH] [--seed N] [--out DIR] [--override k=v]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import meta
from .config import RunConfig
from .errors import SfcError
from .verify import gradient_suite

log = logging.getLogger("sfc")

COMMANDS = ("experts", "train-sf", "train-policy", "adapt", "export-embeddings", "grad-check", "pipeline")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfc", description="Successor-feature context meta-RL experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="section.key = value config file")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--out", help="output root (default: $SFC_OUT, else run.output_dir)")
    common.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="config override; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("experts", parents=[common], help="stage 1: collect expert datasets")
    tsf = sub.add_parser("train-sf", parents=[common], help="stage 2: train the SF network")
    tsf.add_argument("--resume", action="store_true", help="continue from the saved SF checkpoint")
    sub.add_parser("train-policy", parents=[common], help="stage 3: train policy and context encoder")
    sub.add_parser("adapt", parents=[common], help="adapt to held-out tasks and write results")
    sub.add_parser("export-embeddings", parents=[common], help="write contexts and their PCA projection")
    sub.add_parser("grad-check", parents=[common], help="finite-difference check of every loss term")
    sub.add_parser("pipeline", parents=[common], help="all stages, adaptation and embedding export")
    return p


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.defaults()
    extra = list(args.override)
    if args.seed is not None:
        extra.append(f"run.seed={args.seed}")
    return cfg.with_overrides(extra)


def output_root(args, cfg: RunConfig) -> str:
    return args.out or os.environ.get("SFC_OUT") or cfg["run.output_dir"]


def _report_adapt(results) -> None:
    for r in results:
        print(f"task {r.task.task_id}: chosen_k={r.chosen_k} eval_mean={np.mean(r.eval_returns):.4f} "
              f"normalized={r.normalized_score:.4f}")
    print(f"mean normalized score {np.mean([r.normalized_score for r in results]):.4f}")


def run(args) -> int:
    if args.command == "grad-check":
        seed = args.seed if args.seed is not None else 0
        ok = True
        for name, rep in gradient_suite(seed):
            ok &= rep.passed
            print(f"{name:14s} max_rel_error={rep.max_rel_error:.3e} {'PASS' if rep.passed else 'FAIL'}")
        return 0 if ok else 1

    cfg = resolve_config(args)
    layout = meta.Layout.for_config(cfg, output_root(args, cfg))
    meta.write_resolved(cfg, layout)
    t0 = time.perf_counter()
    if args.command == "experts":
        sets = meta.stage_experts(cfg, layout)
        print(f"wrote {len(sets)} datasets to {layout.datasets}")
    elif args.command == "train-sf":
        meta.stage_sf(cfg, layout, resume=args.resume)
        print(f"SF network saved under {layout.checkpoints}")
    elif args.command == "train-policy":
        meta.stage_policy(cfg, layout)
        print(f"policy and encoder saved under {layout.checkpoints}")
    elif args.command == "adapt":
        _report_adapt(meta.stage_adapt(cfg, layout))
    elif args.command == "export-embeddings":
        Z, _, _ = meta.stage_embeddings(cfg, layout)
        print(f"wrote {len(Z)} contexts to {layout.results}")
    elif args.command == "pipeline":
        meta.run_training_pipeline(cfg, layout)
        _report_adapt(meta.stage_adapt(cfg, layout))
        meta.stage_embeddings(cfg, layout)
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return run(args)
    except (SfcError, meta.StageError) as exc:
        print(f"sfc {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
