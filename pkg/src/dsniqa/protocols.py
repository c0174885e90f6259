"""Evaluation protocols: splits, seeded repeats and the experiment designs.

Kinds handled by :func:`run_experiment`:

* ``individual``     -- ``repeats`` x (split -> train -> test), medians reported
* ``cross-db``       -- train on one manifest, test on each other manifest
* ``per-distortion`` -- one training run, one report per distortion label
* ``ablation``       -- ``individual`` protocol for one model variant
* ``crop-size``      -- one training run per training crop size, tested at full size
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidConfig, MissingDistortionLabels, MissingReferenceIds, TooFewItems
from .imaging import DatasetManifest, ImageDataset
from .metrics import PLCC_MAPPING, evaluate
from .predictor import VARIANTS, ModelConfig, build_bundle
from .training import TrainConfig, fit, score_dataset

log = logging.getLogger(__name__)

KINDS = ("individual", "cross-db", "per-distortion", "ablation", "crop-size")
DEFAULT_CROP_SIZES = [(32, 32), (64, 64), (128, 128), (224, 224), (320, 320), None]


@dataclass
class SplitSpec:
    mode: str = "random-image"  # or "by-reference-content"
    train_fraction: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("random-image", "by-reference-content"):
            raise InvalidConfig(f"unknown split mode {self.mode!r}")
        if not 0 < self.train_fraction < 1:
            raise InvalidConfig("train_fraction must lie in (0, 1)")


def split(manifest: DatasetManifest, spec: SplitSpec):
    """Seeded train/test partition; content mode keeps each reference on one side."""
    spec.validate()
    entries = manifest.entries
    if spec.mode == "by-reference-content":
        if any(e.reference_id is None for e in entries):
            raise MissingReferenceIds("content split needs reference_id on every entry")
        units = sorted({e.reference_id for e in entries})
    else:
        units = list(range(len(entries)))
    if len(units) < 2:
        raise TooFewItems(f"need at least 2 units to split, got {len(units)}")
    rng = np.random.default_rng(spec.seed)
    order = rng.permutation(len(units))
    n_train = min(max(int(round(spec.train_fraction * len(units))), 1), len(units) - 1)
    train_units = {units[i] for i in order[:n_train]}
    if spec.mode == "by-reference-content":
        tr = [i for i, e in enumerate(entries) if e.reference_id in train_units]
    else:
        tr = sorted(train_units)
    trs = set(tr)
    te = [i for i in range(len(entries)) if i not in trs]
    tag = f"{manifest.name}:{spec.mode}:{spec.train_fraction}:{spec.seed}"
    return manifest.subset(tr, tag + ":train"), manifest.subset(te, tag + ":test")


def median(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


@dataclass
class ExperimentConfig:
    kind: str = "individual"
    train_manifest: Optional[DatasetManifest] = None
    test_manifests: list = field(default_factory=list)
    repeats: int = 10
    ablation_variant: Optional[str] = None
    crop_sizes: Optional[list] = None
    split_mode: str = "random-image"
    train_fraction: float = 0.8
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown experiment kind {self.kind!r}")
        if self.repeats < 1:
            raise InvalidConfig("repeats must be >= 1")
        if self.train_manifest is None:
            raise InvalidConfig("train_manifest is required")
        if self.kind == "cross-db" and not self.test_manifests:
            raise InvalidConfig("cross-db needs at least one test manifest")
        if self.kind == "ablation" and self.ablation_variant not in VARIANTS:
            raise InvalidConfig(f"ablation needs a variant from {VARIANTS}")


@dataclass
class Record:
    kind: str
    seed: int
    split_id: str
    condition: str
    srcc: float
    plcc: float
    n: int
    repeat_index: int = 0


@dataclass
class ProtocolReport:
    kind: str
    records: list = field(default_factory=list)
    medians: dict = field(default_factory=dict)  # condition -> (srcc, plcc)
    param_counts: dict = field(default_factory=dict)
    access_log: list = field(default_factory=list)  # images touched during training
    notes: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["kind", "seed", "split_id", "condition", "repeat_index", "srcc", "plcc", "n"])
        for r in self.records:
            w.writerow([r.kind, r.seed, r.split_id, r.condition, r.repeat_index,
                        f"{r.srcc:.6f}", f"{r.plcc:.6f}", r.n])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"experiment: {self.kind}", f"plcc_mapping: {PLCC_MAPPING}"]
        for k, v in self.notes.items():
            lines.append(f"{k}: {v}")
        for r in self.records:
            lines.append(
                f"[{r.condition}] repeat={r.repeat_index} seed={r.seed} split={r.split_id} "
                f"srcc={r.srcc:.4f} plcc={r.plcc:.4f} n={r.n}")
        for cond, (s, p) in self.medians.items():
            count = self.param_counts.get(cond)
            extra = f" params={count}" if count is not None else ""
            lines.append(f"median [{cond}] srcc={s:.4f} plcc={p:.4f}{extra}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.to_text(), encoding="utf-8")
        (out / "report.csv").write_text(self.to_csv(), encoding="utf-8")
        if self.kind == "crop-size":
            plot_crop_series(self, out / "crop_size.png")

    def _set_medians(self) -> None:
        conds: dict = {}
        for r in self.records:
            conds.setdefault(r.condition, []).append(r)
        self.medians = {c: (median([r.srcc for r in rs]), median([r.plcc for r in rs]))
                        for c, rs in conds.items()}


def _train_eval(model: ModelConfig, train_m: DatasetManifest, tc: TrainConfig, report):
    bundle = build_bundle(model, tc.seed, tc.torch_dtype)
    ds = ImageDataset(train_m)
    fit(bundle, ds, tc)
    seen = set(report.access_log)
    report.access_log.extend(p for p in dict.fromkeys(ds.access_log) if p not in seen)
    return bundle


def _score(bundle, manifest: DatasetManifest):
    preds = score_dataset(bundle, ImageDataset(manifest, cache=False))
    return preds, np.array([e.score for e in manifest.entries])


def _split_spec(config: ExperimentConfig, seed: int) -> SplitSpec:
    return SplitSpec(config.split_mode, config.train_fraction, seed)


def _repeated(config: ExperimentConfig, tc: TrainConfig, model: ModelConfig, condition: str,
              report: ProtocolReport) -> None:
    for r in range(config.repeats):
        seed = tc.seed + r
        spec = _split_spec(config, seed)
        train_m, test_m = split(config.train_manifest, spec)
        bundle = _train_eval(model, train_m, replace(tc, seed=seed), report)
        preds, gt = _score(bundle, test_m)
        ev = evaluate(preds, gt, seed, test_m.name, r)
        report.records.append(Record(report.kind, seed, test_m.name, condition,
                                     ev.srcc, ev.plcc, ev.n, r))
        report.param_counts[condition] = bundle.num_parameters()
        log.info("%s repeat %d: srcc=%.4f plcc=%.4f", condition, r, ev.srcc, ev.plcc)


def run_experiment(config: ExperimentConfig, train_config: TrainConfig) -> ProtocolReport:
    config.validate()
    train_config.validate()
    kind = config.kind
    report = ProtocolReport(kind)
    report.notes["test_image_size"] = "original"

    if kind == "individual":
        _repeated(config, train_config, config.model, config.model.variant, report)

    elif kind == "ablation":
        model = replace(config.model, variant=config.ablation_variant)
        _repeated(config, train_config, model, config.ablation_variant, report)

    elif kind == "cross-db":
        bundle = _train_eval(config.model, config.train_manifest, train_config, report)
        report.param_counts[config.model.variant] = bundle.num_parameters()
        for tm in config.test_manifests:
            preds, gt = _score(bundle, tm)
            ev = evaluate(preds, gt, train_config.seed, tm.name)
            report.records.append(Record(kind, train_config.seed, tm.name, tm.name,
                                         ev.srcc, ev.plcc, ev.n))
        trained_on = set(report.access_log)
        leaked = [e.image_path for tm in config.test_manifests for e in tm.entries
                  if e.image_path in trained_on]
        report.notes["test_images_seen_in_training"] = len(leaked)

    elif kind == "per-distortion":
        train_m, test_m = split(config.train_manifest,
                                _split_spec(config, train_config.seed))
        if any(e.distortion_type is None for e in test_m.entries):
            raise MissingDistortionLabels("per-distortion needs distortion_type on test entries")
        bundle = _train_eval(config.model, train_m, train_config, report)
        preds, gt = _score(bundle, test_m)
        labels = np.array([e.distortion_type for e in test_m.entries])
        for lab in sorted(set(labels)):
            m = labels == lab
            ev = evaluate(preds[m], gt[m], train_config.seed, test_m.name)
            report.records.append(Record(kind, train_config.seed, test_m.name, lab,
                                         ev.srcc, ev.plcc, ev.n))

    elif kind == "crop-size":
        train_m, test_m = split(config.train_manifest,
                                _split_spec(config, train_config.seed))
        sizes = config.crop_sizes if config.crop_sizes is not None else DEFAULT_CROP_SIZES
        shapes = {s.shape for s in ImageDataset(train_m, cache=False)}
        h_min, w_min = min(h for h, _ in shapes), min(w for _, w in shapes)
        skipped = []
        for size in sizes:
            size = tuple(size) if size is not None else None
            if size is None and len(shapes) > 1:
                skipped.append("full (mixed training sizes)")
                continue
            if size is not None and (size[0] > h_min or size[1] > w_min):
                skipped.append(f"{size[0]}x{size[1]}")
                continue
            label = "full" if size is None else f"{size[0]}x{size[1]}"
            tc = replace(train_config, crop_size=size)
            bundle = _train_eval(config.model, train_m, tc, report)
            preds, gt = _score(bundle, test_m)
            ev = evaluate(preds, gt, train_config.seed, test_m.name)
            report.records.append(Record(kind, train_config.seed, test_m.name, label,
                                         ev.srcc, ev.plcc, ev.n))
        if skipped:
            report.notes["skipped_crop_sizes"] = ", ".join(skipped)

    report._set_medians()
    return report


def variant_param_counts(model: ModelConfig) -> dict:
    """Trainable parameter count of every ablation variant built from ``model``."""
    return {v: build_bundle(replace(model, variant=v)).num_parameters() for v in VARIANTS}


def plot_crop_series(report: ProtocolReport, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [r.condition for r in report.records]
    x = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, [r.srcc for r in report.records], 0.4, label="SRCC")
    ax.bar(x + 0.2, [r.plcc for r in report.records], 0.4, label="PLCC")
    ax.set_xticks(x, labels)
    ax.set_xlabel("training crop size")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
