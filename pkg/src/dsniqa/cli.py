"""Command-line entry point: ``dsniqa {train,eval,segment,metrics,experiment}``.

Exit codes: 0 success, 1 contract/config errors, 2 I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import config as runconfig
from .errors import BadConfig, DSNIQAError, UnknownSubcommand
from .imaging import ImageDataset, decode_image, load_manifest
from .metrics import evaluate
from .protocols import ExperimentConfig, SplitSpec, run_experiment
from .superpixel import (
    CNNSegmenter,
    label_map_to_rgb,
    segment,
    to_label_map,
    write_prob_blob,
)
from .training import load_checkpoint, save_checkpoint, score_dataset, train

log = logging.getLogger("dsniqa")

SUBCOMMANDS = ("train", "eval", "segment", "metrics", "experiment")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadConfig(message)


def _common(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--backbone", dest="backbone.variant")
    p.add_argument("--backend", dest="segmenter.backend")
    p.add_argument("--n", dest="segmenter.n_superpixels")
    p.add_argument("--variant", dest="model.variant")
    p.add_argument("--epochs", dest="train.epochs")
    p.add_argument("--batch-size", dest="train.batch_size")
    p.add_argument("--lr", dest="train.learning_rate")
    p.add_argument("--weight-decay", dest="train.weight_decay")
    p.add_argument("--crop", dest="train.crop_size", help="e.g. 224,224 or none")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dsniqa", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a model on a manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["none", "random-image", "by-reference-content"],
                   default="none", help="train on the train half of a split")

    p = sub.add_parser("eval", help="score a manifest with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="runs/eval")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("segment", help="superpixel-segment one image")
    _common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--labels", help="write label map PNG here")
    p.add_argument("--probs", help="write SPXL1 probability blob here")
    p.add_argument("--checkpoint", help="take cnn segmenter params from a checkpoint")

    p = sub.add_parser("metrics", help="SRCC/PLCC of two single-column CSV files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)

    p = sub.add_parser("experiment", help="run an evaluation protocol")
    _common(p)
    p.add_argument("--kind", dest="experiment.kind")
    p.add_argument("--train-manifest", dest="experiment.train_manifest")
    p.add_argument("--test-manifest", action="append", default=None)
    p.add_argument("--repeats", dest="experiment.repeats")
    p.add_argument("--ablation-variant", dest="experiment.variant")
    p.add_argument("--crop-sizes", dest="experiment.crop_sizes", help="e.g. 32,64,224,full")
    p.add_argument("--split-mode", dest="experiment.split_mode")
    return ap


def _flag_values(args) -> dict:
    flags = {k: v for k, v in vars(args).items() if "." in k and v is not None}
    if getattr(args, "seed", None) is not None:
        flags["seed"] = args.seed
    if getattr(args, "test_manifest", None):
        flags["experiment.test_manifests"] = ",".join(args.test_manifest)
    # the ablation kind reads its variant from --variant as well
    if getattr(args, "experiment.kind", None) == "ablation" and "model.variant" in flags:
        flags.setdefault("experiment.variant", flags["model.variant"])
    return flags


def _resolve(args) -> runconfig.RunConfig:
    cfg = runconfig.load(args.config, _flag_values(args))
    for key, origin in sorted(cfg.sources.items()):
        log.info("config %s from %s", key, origin)
    return cfg


def _write_header(out: Path, cfg: runconfig.RunConfig, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    header = dict(cfg.header(), command=command)
    (out / "run_header.json").write_text(json.dumps(header, indent=1, sort_keys=True) + "\n",
                                         encoding="utf-8")
    (out / "resolved_config.json").write_text(
        json.dumps(cfg.resolved(), indent=1, sort_keys=True, default=str) + "\n",
        encoding="utf-8")


def cmd_train(args) -> int:
    cfg = _resolve(args)
    out = Path(args.out)
    manifest = load_manifest(args.manifest)
    spec = None if args.split == "none" else SplitSpec(args.split, 0.8, cfg.seed)
    _write_header(out, cfg, "train")
    bundle, tlog = train(manifest, spec, cfg.train_config(), cfg.model_config())
    save_checkpoint(bundle, out / "model.ckpt")
    tlog.write_csv(out / "train_log.csv")
    print(f"trained {len(tlog.rows)} epochs, final mean_loss={tlog.rows[-1][1]:.6f}")
    print(f"checkpoint: {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    mc = bundle.config
    model_keys = {k: getattr(mc, k) for k in ("variant", "spmap_channels", "spmap_pool_size",
                                              "spmap_hidden", "head_hidden", "fixed_size")}
    cfg = runconfig.RunConfig(seed=args.seed, backbone=mc.backbone, segmenter=mc.segmenter,
                              model=model_keys)
    _write_header(out, cfg, "eval")
    preds = score_dataset(bundle, ImageDataset(manifest, cache=False))
    gt = np.array([e.score for e in manifest.entries])
    with open(out / "scores.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["image_path", "score", "prediction"])
        for e, p in zip(manifest.entries, preds):
            w.writerow([e.image_path, repr(e.score), repr(float(p))])
    report = evaluate(preds, gt, args.seed, manifest.name)
    d = dict(report.to_dict(), test_image_size="original", test_standardization="same-as-train")
    (out / "eval_report.json").write_text(json.dumps(d, indent=1) + "\n", encoding="utf-8")
    print(f"srcc={report.srcc:.6f} plcc={report.plcc:.6f} n={report.n}")
    return 0


def cmd_segment(args) -> int:
    cfg = _resolve(args)
    seg_cfg = cfg.segmenter
    params = None
    if seg_cfg.backend == "cnn":
        if args.checkpoint:
            ck = load_checkpoint(args.checkpoint)
            params, seg_cfg = ck.segmenter_params, ck.config.segmenter
            if params is None:
                raise BadConfig("checkpoint carries no cnn segmenter")
        else:
            log.warning("cnn backend without checkpoint: randomly initialised from seed %d",
                        cfg.seed)
            torch.manual_seed(cfg.seed)
            params = CNNSegmenter(seg_cfg.n_superpixels, seg_cfg.cnn_channels)
    _write_header(Path(args.out), cfg, "segment")
    spmap = segment(decode_image(args.image), seg_cfg, params)
    labels = to_label_map(spmap)
    if args.labels:
        Image.fromarray(label_map_to_rgb(labels)).save(args.labels)
    if args.probs:
        write_prob_blob(spmap, args.probs)
    print(f"segments={len(np.unique(labels))} size={labels.shape[0]}x{labels.shape[1]} "
          f"n={spmap.n_superpixels}")
    return 0


def read_column(path) -> np.ndarray:
    """Numbers from the first column of a CSV; a non-numeric first row is a header."""
    vals = []
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not row[0].strip():
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if i == 0:
                    continue
                raise BadConfig(f"{path}: row {i + 1} is not numeric: {row[0]!r}") from None
    return np.array(vals)


def cmd_metrics(args) -> int:
    pred, gt = read_column(args.pred), read_column(args.gt)
    rep = evaluate(pred, gt)
    print(f"srcc={rep.srcc:.6g} plcc={rep.plcc:.6g} n={rep.n}")
    return 0


def cmd_experiment(args) -> int:
    cfg = _resolve(args)
    ex = cfg.experiment
    if not ex.train_manifest:
        raise BadConfig("experiment.train_manifest is required")
    econf = ExperimentConfig(
        kind=ex.kind,
        train_manifest=load_manifest(ex.train_manifest),
        test_manifests=[load_manifest(p) for p in ex.test_manifests],
        repeats=ex.repeats,
        ablation_variant=ex.variant,
        crop_sizes=ex.crop_sizes,
        split_mode=ex.split_mode,
        train_fraction=ex.train_fraction,
        model=cfg.model_config(),
    )
    out = Path(args.out)
    _write_header(out, cfg, "experiment")
    report = run_experiment(econf, cfg.train_config())
    report.write(out)
    print(report.to_text(), end="")
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "segment": cmd_segment,
            "metrics": cmd_metrics, "experiment": cmd_experiment}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if not argv or argv[0] not in SUBCOMMANDS:
            if argv and argv[0] in ("-h", "--help"):
                build_parser().print_help()
                return 0
            raise UnknownSubcommand(
                f"unknown subcommand {argv[0] if argv else '(none)'!r}; "
                f"choose from {', '.join(SUBCOMMANDS)}")
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False)
                            else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except DSNIQAError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
