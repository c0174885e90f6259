#!/usr/bin/env python3
"""Run every experiment kind on a freshly generated toy dataset.

A smoke-scale tour of the harness: individual, ablation (all variants),
cross-db, per-distortion and crop-size.  Reports land under ``--out``.
"""
import argparse
import logging
from pathlib import Path

from dsniqa.imaging import load_manifest
from dsniqa.predictor import VARIANTS, ModelConfig
from dsniqa.protocols import ExperimentConfig, SplitSpec, run_experiment, split
from dsniqa.toydata import make_dataset
from dsniqa.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/toy")
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)

    make_dataset(out / "data_a", n_refs=8, size=(96, 96), seed=args.seed, name="toy_a")
    make_dataset(out / "data_b", n_refs=4, size=(80, 112), seed=args.seed + 1, name="toy_b")
    a = load_manifest(out / "data_a" / "manifest.csv", score_scale=(0, 100), name="toy_a")
    b = load_manifest(out / "data_b" / "manifest.csv", score_scale=(0, 100), name="toy_b")

    tc = TrainConfig(epochs=args.epochs, seed=args.seed)
    model = ModelConfig(fixed_size=(64, 64))  # baseline-fixed input must fit the toy images
    runs = {"individual": ExperimentConfig("individual", a, repeats=args.repeats, model=model,
                                           split_mode="by-reference-content")}
    for v in VARIANTS:
        runs[f"ablation-{v}"] = ExperimentConfig("ablation", a, repeats=args.repeats,
                                                 ablation_variant=v, model=model,
                                                 split_mode="by-reference-content")
    train_a, test_a = split(a, SplitSpec("by-reference-content", 0.8, args.seed))
    runs["cross-db"] = ExperimentConfig("cross-db", train_a, [test_a, b], model=model)
    runs["per-distortion"] = ExperimentConfig("per-distortion", a, model=model,
                                              split_mode="by-reference-content")
    runs["crop-size"] = ExperimentConfig("crop-size", a, model=model,
                                         crop_sizes=[(32, 32), (64, 64), None])

    for name, cfg in runs.items():
        report = run_experiment(cfg, tc)
        report.write(out / name)
        print(f"== {name}")
        print(report.to_text(), end="")


if __name__ == "__main__":
    main()
