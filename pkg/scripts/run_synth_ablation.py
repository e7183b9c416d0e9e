#!/usr/bin/env python3
"""Train the none/static/dynamic grid on the synthetic task and summarize.

Thin driver over `cadad ablate` using configs/default.cfg. The full grid is
3 modes x 5 seeds x 300 epochs (roughly ten minutes on a laptop CPU);
--quick cuts it to 2 seeds x 40 epochs for a smoke run.

Usage:
    python3 scripts/run_synth_ablation.py [--quick] [--out DIR] [--set K=V ...]
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from cadad.cli import main as cadad_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="2 seeds, 40 epochs")
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    args = parser.parse_args()

    config = os.path.join(os.path.dirname(__file__), "..", "configs", "default.cfg")
    argv = ["ablate", "--config", config, "--out", args.out]
    if args.quick:
        argv += ["--set", "ablate.seeds=2", "--set", "train.epochs=40"]
    for pair in args.set:
        argv += ["--set", pair]
    return cadad_main(argv)


if __name__ == "__main__":
    sys.exit(main())
