"""Command-line entry point: ``ptychodv <scenario> [--config PATH] [--seed N] [--out DIR] [--preset P]``."""

import argparse
import logging
import sys

from .config import PRESETS, SCENARIOS, ConfigError, load_config
from .io import FormatError
from .physics import GeometryError
from .trainer import CheckpointError, TrainingError


def build_parser():
    p = argparse.ArgumentParser(prog="ptychodv", description="Ptychographic reconstruction experiments.")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("--config", help="YAML or JSON experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--preset", choices=sorted(PRESETS), help="defaults to fill before the config")
    p.add_argument("--checkpoint", help="trained model directory")
    p.add_argument("--dataset", help="simulated dataset directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from . import experiments
    try:
        cfg = load_config(args.config, args.preset, {
            "scenario": args.scenario, "seed": args.seed, "out": args.out,
            "checkpoint": args.checkpoint, "dataset": args.dataset})
        result = experiments.SCENARIO_RUNNERS[cfg.scenario](cfg)
    except (ConfigError, FormatError, GeometryError, CheckpointError, TrainingError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _summarize(cfg, result)
    return 0


def _summarize(cfg, result):
    print(f"scenario {cfg.scenario}  config {cfg.hash()}  out {cfg.out}")
    if cfg.scenario == "simulate":
        print(f"{len(result['samples'])} samples, patterns {[p['pattern'] for p in result['patterns']]}")
    elif cfg.scenario == "train":
        _, history = result
        last = history[-1]
        print(f"epochs {len(history)}  final loss {last['train_loss']:.4g}  val nrmse {last['val_nrmse']:.4f}")
    elif cfg.scenario == "initializer-study":
        for kind, reports in result.items():
            print(f"-- probe {kind}")
            for r in reports:
                print(f"{r.method:28s} {r.pattern:6s} {r.cell()}")
    else:
        for r in result:
            print(f"{r.method:16s} {r.pattern:6s} {r.cell()}")


if __name__ == "__main__":
    sys.exit(main())
