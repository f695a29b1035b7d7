#!/usr/bin/env python3
"""Run the full experiment: dataset, training, penalty search, attacks, reports.

Defaults reproduce the reference configuration (512 samples at 128x128,
both architectures, victim A). Scale n and size down for a quick smoke
run, e.g.:

    python scripts/run_pipeline.py --n 16 --size 32 --epochs 2 --out runs/smoke
"""

import argparse
import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tamperfool.harness import ExperimentConfig, run_pipeline
from tamperfool.localizer import TrainingConfig


def parse_args():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=512, help="dataset size")
    parser.add_argument("--seed", type=int, default=7, help="master seed")
    parser.add_argument("--size", type=int, default=128, help="image side")
    parser.add_argument("--out", default="runs/default", help="output directory")
    parser.add_argument("--victim", default="A", choices=("A", "B"))
    parser.add_argument("--epochs", type=int, default=30)
    parser.add_argument("--psnr-floor", type=float, default=34.0)
    parser.add_argument("--workers", type=int, default=1)
    return parser.parse_args()


def main():
    args = parse_args()
    training = {
        arch: TrainingConfig(epochs=args.epochs) for arch in ("A", "B")
    }
    cfg = ExperimentConfig(
        n=args.n,
        seed=args.seed,
        size=args.size,
        out_dir=args.out,
        victim_id=args.victim,
        training=training,
        psnr_floor=args.psnr_floor,
        workers=args.workers,
    )
    t0 = time.time()
    outcome = run_pipeline(cfg)
    elapsed = time.time() - t0

    search = outcome["search"]
    print(f"\nchosen lambda: {search.chosen_lambda:g} (floor {search.psnr_floor:g} dB)")
    for arch, model in outcome["models"].items():
        val_f1 = model.training_manifest["val_f1"]
        print(f"model {arch}: val F1 {val_f1:.4f}")
    print(f"report rows: {len(outcome['table'].rows)}")
    print(f"artifacts under {outcome['out_dir']}")
    print(f"total time: {elapsed:.0f}s")


if __name__ == "__main__":
    main()
