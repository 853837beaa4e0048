"""Command-line entry point: ``transnar <subcommand> [flags] [key=value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import LM_INITS, POSITIONAL, VARIANTS, ConfigError, load_config
from .evaluation import format_table
from .nar import TrainingDivergedError
from . import train

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_PREREQUISITE = 4
EXIT_INCOMPLETE = 5
EXIT_INVARIANT = 6

log = logging.getLogger("transnar")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="desk", help="YAML file or built-in name (desk, published, smoke, acceptance)")
    common.add_argument("--out", default="runs/default", help="run directory")
    common.add_argument("--seed", type=int, help="restrict to one seed (default: every configured seed)")
    common.add_argument("--variant", choices=VARIANTS, help="restrict to one model variant")
    common.add_argument("--lm-init", choices=LM_INITS)
    common.add_argument("--positional", choices=POSITIONAL)
    common.add_argument("--quiet", action="store_true")
    common.add_argument("overrides", nargs="*", metavar="key=value", help="dotted config overrides")

    p = argparse.ArgumentParser(prog="transnar", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="{gen-data,pretrain-nar,train,evaluate,report}")
    sub.add_parser("gen-data", parents=[common], help="write the paired text/graph dataset")
    sub.add_parser("pretrain-nar", parents=[common], help="phase 1: pre-train the graph reasoner")
    sub.add_parser("train", parents=[common], help="phase 2: fine-tune baseline and/or TransNAR")
    sub.add_parser("evaluate", parents=[common], help="greedy-decode the eval sets and score them")
    rp = sub.add_parser("report", parents=[common], help="aggregate scores into tables and plots")
    rp.add_argument("--no-plots", action="store_true")
    return p


def _resolve(args):
    overrides = list(args.overrides)
    if args.lm_init:
        overrides.append(f"lm_init={args.lm_init}")
    if args.positional:
        overrides.append(f"positional={args.positional}")
    if args.variant:
        overrides += [f"variant={args.variant}", f"variants=[{args.variant}]"]
    cfg = load_config(args.config, overrides)
    cfg.deterministic = train.deterministic_requested(cfg.deterministic)
    return cfg


def _cells(cfg, args):
    seeds = [args.seed] if args.seed is not None else cfg.train.seeds
    return [(v, s) for s in seeds for v in cfg.variants]


def dispatch(args, cfg) -> int:
    out = Path(args.out)
    cmd = args.command
    if cmd == "gen-data":
        manifest = train.build_data(cfg, out)
        print(f"wrote {len(manifest['files'])} files under {train.data_root(cfg, out)}")
    elif cmd == "pretrain-nar":
        report = train.run_phase1(cfg, out, seed=args.seed or 0)
        print(json.dumps(report, indent=2))
    elif cmd == "train":
        for variant, seed in _cells(cfg, args):
            rec = train.run_phase2(cfg, out, seed, variant)
            print(f"{rec.run_id}: {rec.steps} steps, epoch losses {[round(x, 4) for x in rec.epoch_losses]}")
    elif cmd == "evaluate":
        for variant, seed in _cells(cfg, args):
            scores = train.evaluate_checkpoint(cfg, out, variant, seed)
            mean = sum(s.clrs_score for s in scores) / max(len(scores), 1)
            print(f"{variant}-seed{seed}: {len(scores)} generations, mean clrs {mean:.3f}")
    elif cmd == "report":
        report = train.run_report(cfg, out, plots=not args.no_plots)
        print(format_table(report))
        if report["chain_violations"]:
            return EXIT_INVARIANT
        if report["missing"]:
            return EXIT_INCOMPLETE
    return EXIT_OK


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(asctime)s %(message)s")
    try:
        cfg = _resolve(args)
    except (ConfigError, TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    # snapshot first, so even a failed invocation leaves its resolved config behind
    snap = out / "invocations" / f"{args.command}.yaml"
    cfg.dump(snap)
    if not (out / "config.yaml").exists():
        cfg.dump(out / "config.yaml")
    train.set_deterministic(cfg.deterministic)
    try:
        return dispatch(args, cfg)
    except train.MissingPrerequisiteError as e:
        print(f"missing prerequisite: {e}", file=sys.stderr)
        return EXIT_PREREQUISITE
    except (train.FrozenParameterError, CheckpointError, FloatingPointError, TrainingDivergedError) as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
