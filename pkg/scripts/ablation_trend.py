#!/usr/bin/env python3
"""Does `full` beat `baseline-arbitrary` on real data at desk scale?

Draws a seeded subset of an authentic-distortion manifest, runs the ablation
protocol for both variants with the same repeats and seeds, and compares the
median test SRCC.  Prints ``trend: holds`` or ``trend: does not hold`` last.
The outcome is expected to be noisy with a few hundred images and a tiny
backbone, so nothing here gates the test suite.
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from dsniqa.imaging import load_manifest
from dsniqa.predictor import ModelConfig
from dsniqa.protocols import ExperimentConfig, run_experiment
from dsniqa.superpixel import SegmenterConfig
from dsniqa.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest", required=True)
    ap.add_argument("--subset", type=int, default=200)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--crop", type=int, default=224, help="square training crop")
    ap.add_argument("--backend", default="slic", choices=["slic", "cnn"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="runs/ablation_trend")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    full = load_manifest(args.manifest)
    if len(full) < args.subset:
        raise SystemExit(f"manifest has {len(full)} images, need at least {args.subset}")
    pick = np.sort(np.random.default_rng(args.seed).choice(len(full), args.subset, replace=False))
    manifest = full.subset(pick.tolist(), f"{full.name}[{args.subset}]")

    model = ModelConfig(segmenter=SegmenterConfig(backend=args.backend))
    tc = TrainConfig(epochs=args.epochs, crop_size=(args.crop, args.crop), seed=args.seed)
    medians = {}
    for variant in ("baseline-arbitrary", "full"):
        cfg = ExperimentConfig("ablation", manifest, repeats=args.repeats,
                               ablation_variant=variant, model=model)
        report = run_experiment(cfg, tc)
        report.write(Path(args.out) / variant)
        medians[variant] = report.medians[variant][0]
        print(f"{variant}: median srcc={medians[variant]:.4f} params={report.param_counts[variant]}")

    holds = medians["full"] >= medians["baseline-arbitrary"]
    print(f"trend: {'holds' if holds else 'does not hold'} "
          f"(full {medians['full']:.4f} vs baseline-arbitrary {medians['baseline-arbitrary']:.4f})")


if __name__ == "__main__":
    main()
