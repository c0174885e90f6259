"""Flat ``key = value`` run configuration with dotted section prefixes.

Example::

    # tiny desk-scale run
    seed = 3
    backbone.variant = tiny
    segmenter.backend = cnn
    train.epochs = 40
    train.crop_size = 224,224
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

from .backbone import BackboneConfig
from .errors import BadConfig, DSNIQAError
from .predictor import ModelConfig
from .superpixel import SegmenterConfig
from .training import TrainConfig

__version__ = "0.1.0"


def _ints(v: str) -> tuple:
    return tuple(int(x) for x in v.replace("x", ",").split(",") if x.strip())


def _floats(v: str) -> tuple:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt(conv):
    def parse(v: str):
        return None if v.strip().lower() in ("", "none") else conv(v)
    return parse


def _crop_list(v: str) -> list:
    out = []
    for tok in v.split(","):
        tok = tok.strip()
        if tok == "full":
            out.append(None)
        elif "x" in tok:
            h, w = tok.split("x")
            out.append((int(h), int(w)))
        elif tok:
            out.append((int(tok), int(tok)))
    return out


def _paths(v: str) -> list:
    return [p.strip() for p in v.split(",") if p.strip()]


# section -> key -> parser
SCHEMA = {
    "": {"seed": int},
    "backbone": {
        "variant": str, "tap_stages": _ints, "local_dims": _ints, "holistic_dim": int,
        "adaptive_pool_size": _ints, "head_channels": int, "tiny_channels": _ints,
        "mean": _floats, "std": _floats, "weights_path": _opt(str),
    },
    "segmenter": {
        "backend": str, "n_superpixels": int, "slic_compactness": float,
        "slic_iterations": int, "cnn_channels": lambda v: list(_ints(v)), "tv_weight": float,
    },
    "model": {
        "variant": str, "spmap_channels": _ints, "spmap_pool_size": _ints,
        "spmap_hidden": int, "head_hidden": int, "fixed_size": _ints,
    },
    "train": {
        "learning_rate": float, "weight_decay": float, "batch_size": int, "epochs": int,
        "lr_schedule": str, "lr_gamma": float, "lr_step_epochs": int,
        "crop_size": _opt(_ints), "freeze_backbone": _bool, "bucket_by_size": _bool,
        "dtype": str,
    },
    "experiment": {
        "kind": str, "train_manifest": _opt(str), "test_manifests": _paths, "repeats": int,
        "variant": _opt(str), "crop_sizes": _opt(_crop_list), "split_mode": str,
        "train_fraction": float,
    },
}


@dataclass
class ExperimentSection:
    kind: str = "individual"
    train_manifest: Optional[str] = None
    test_manifests: list = field(default_factory=list)
    repeats: int = 10
    variant: Optional[str] = None
    crop_sizes: Optional[list] = None
    split_mode: str = "random-image"
    train_fraction: float = 0.8


@dataclass
class RunConfig:
    seed: int = 0
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    sources: dict = field(default_factory=dict)  # key -> "default" | "file" | "flag" | "env"

    def model_config(self) -> ModelConfig:
        return ModelConfig(backbone=self.backbone, segmenter=self.segmenter, **self.model)

    def train_config(self) -> TrainConfig:
        return replace(self.train, seed=self.seed)

    def resolved(self) -> dict:
        d = {"seed": self.seed, "backbone": asdict(self.backbone),
             "segmenter": asdict(self.segmenter), "model": asdict(self.model_config()),
             "train": asdict(self.train_config()), "experiment": asdict(self.experiment)}
        d["model"].pop("backbone")
        d["model"].pop("segmenter")
        return d

    @property
    def config_digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def header(self) -> dict:
        return {"artifact": "dsniqa", "version": __version__, "seed": self.seed,
                "config_digest": self.config_digest, "test_standardization": "same-as-train"}

    def validate(self) -> None:
        try:
            self.model_config().validate()
            self.train_config().validate()
        except DSNIQAError as exc:
            raise BadConfig(str(exc)) from None


def parse_text(text: str) -> dict:
    """``key = value`` lines to a dict; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _parse_value(key: str, value):
    section, _, name = key.rpartition(".")
    table = SCHEMA.get(section)
    if table is None or name not in table:
        raise BadConfig(f"unknown config key {key!r}")
    if not isinstance(value, str):
        return value
    try:
        return table[name](value)
    except ValueError as exc:
        raise BadConfig(f"invalid value for {key!r}: {value!r} ({exc})") from None


def build(file_values: Optional[dict] = None, flag_values: Optional[dict] = None,
          env=None) -> RunConfig:
    """Merge with precedence flag > file > env seed > default."""
    env = os.environ if env is None else env
    merged: dict = {}
    sources: dict = {}
    if env.get("DSNIQA_SEED"):
        merged["seed"] = env["DSNIQA_SEED"]
        sources["seed"] = "env"
    for origin, values in (("file", file_values or {}), ("flag", flag_values or {})):
        for k, v in values.items():
            if v is None:
                continue
            merged[k] = v
            sources[k] = origin

    sections: dict = {name: {} for name in SCHEMA}
    for key, raw in merged.items():
        val = _parse_value(key, raw)
        section, _, name = key.rpartition(".")
        sections[section][name] = val

    cfg = RunConfig(sources=sources)
    if "seed" in sections[""]:
        cfg.seed = sections[""]["seed"]
    try:
        cfg.backbone = BackboneConfig(**sections["backbone"])
        cfg.segmenter = SegmenterConfig(**sections["segmenter"])
        cfg.model = sections["model"]
        cfg.train = TrainConfig(**sections["train"])
        cfg.experiment = ExperimentSection(**sections["experiment"])
    except (TypeError, ValueError) as exc:
        raise BadConfig(str(exc)) from None
    cfg.validate()
    return cfg


def load(path: Optional[str], flag_values: Optional[dict] = None, env=None) -> RunConfig:
    file_values = {}
    if path:
        with open(path, encoding="utf-8") as fh:
            file_values = parse_text(fh.read())
    return build(file_values, flag_values, env)
