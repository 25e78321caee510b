"""Command-line entry point: generate | train | infer | eval.

Exit codes: 0 on success, 2 for configuration or I/O errors, 3 for numeric
failures (training divergence, simulator blow-up).
"""

from __future__ import annotations

import argparse
import sys

from . import config as config_mod
from . import experiment
from .errors import ConfigurationError, ContractViolation, SimulationError, TrainingError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grangervae",
        description="Joint Granger-graph learning: dataset generation, "
                    "training, inference, and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate a dataset directory")
    gen.add_argument("--config", required=True, help="experiment config JSON")
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--seed", type=int, default=None,
                     help="override the config seed")

    tr = sub.add_parser("train", help="train a model on a dataset")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--out", required=True, help="run output directory")
    tr.add_argument("--seed", type=int, default=None)
    tr.add_argument("--quiet", action="store_true")

    inf = sub.add_parser("infer", help="extract graph estimates")
    inf.add_argument("--checkpoint", required=True, help="model.bin path")
    inf.add_argument("--data", required=True)
    inf.add_argument("--out", required=True)
    inf.add_argument("--config", default=None,
                     help="optional config JSON (defaults to the "
                          "resolved-config.json next to the checkpoint)")

    ev = sub.add_parser("eval", help="score estimates against truth")
    ev.add_argument("--est", required=True, help="directory of *_est.csv files")
    ev.add_argument("--truth", required=True, help="dataset directory")
    ev.add_argument("--out", required=True, help="metrics JSON path")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            cfg = config_mod.load(args.config, seed=args.seed)
            experiment.run_generate(cfg, args.out)
            print(f"dataset written to {args.out}")
        elif args.command == "train":
            cfg = config_mod.load(args.config, seed=args.seed)
            progress = None
            if not args.quiet:
                def progress(row, val):
                    print(f"epoch {row['epoch']:4d}  total {row['total']:.4f}  "
                          f"val {val:.4f}")
            result = experiment.run_train(cfg, args.data, args.out,
                                          progress=progress)
            print(f"trained {result.stopped_epoch} epochs; "
                  f"checkpoint in {args.out}")
        elif args.command == "infer":
            cfg = (config_mod.load(args.config) if args.config else None)
            experiment.run_infer(args.checkpoint, args.data, args.out, cfg=cfg)
            print(f"estimates written to {args.out}")
        elif args.command == "eval":
            experiment.run_eval(args.est, args.truth, args.out)
            print(f"metrics written to {args.out}")
    except (ConfigurationError, ContractViolation, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, SimulationError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
