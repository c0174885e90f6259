#!/usr/bin/env python3
"""Write a synthetic quality dataset (PNGs + manifest.csv) for desk-scale runs."""
import argparse

from dsniqa.toydata import DISTORTIONS, make_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("out_dir")
    ap.add_argument("--refs", type=int, default=10, help="number of reference scenes")
    ap.add_argument("--levels", default="0,0.33,0.66,1", help="comma-separated distortion levels")
    ap.add_argument("--kinds", default=",".join(DISTORTIONS))
    ap.add_argument("--size", default="64x64", help="HxW")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    h, w = (int(v) for v in args.size.split("x"))
    m = make_dataset(args.out_dir, n_refs=args.refs,
                     levels=tuple(float(v) for v in args.levels.split(",")),
                     kinds=tuple(args.kinds.split(",")), size=(h, w), seed=args.seed)
    print(f"{len(m)} images, scores in {m.score_scale}, manifest at {args.out_dir}/manifest.csv")


if __name__ == "__main__":
    main()
