"""Optimisation (L1 loss + explicit L2 weight penalty, Adam) and checkpoints."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch

from .backbone import BackboneConfig
from .errors import (
    CorruptCheckpoint,
    EmptyBatch,
    EmptySplit,
    InvalidConfig,
    LengthMismatch,
    MixedSizeBatch,
    VersionMismatch,
)
from .imaging import DatasetManifest, ImageDataset, random_crop
from .predictor import FORMAT_VERSION, ModelBundle, ModelConfig, build_bundle
from .superpixel import SegmenterConfig, total_variation

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 8
    epochs: int = 30
    lr_schedule: str = "step"  # "none" | "step"
    lr_gamma: float = 0.5
    lr_step_epochs: int = 10
    seed: int = 0
    crop_size: Optional[tuple] = None
    freeze_backbone: bool = False
    bucket_by_size: bool = False
    dtype: str = "float32"

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidConfig("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise InvalidConfig("weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidConfig("batch_size and epochs must be >= 1")
        if self.lr_schedule not in ("none", "step"):
            raise InvalidConfig(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.lr_schedule == "step" and (self.lr_step_epochs < 1 or not 0 < self.lr_gamma <= 1):
            raise InvalidConfig("step schedule needs lr_step_epochs >= 1 and 0 < lr_gamma <= 1")

    @property
    def torch_dtype(self):
        return {"float32": torch.float32, "float64": torch.float64}[self.dtype]


# --------------------------------------------------------------------------- #
# Losses
# --------------------------------------------------------------------------- #
def l1_loss(predictions, targets):
    """Mean absolute error. Tensors in, tensor out; anything else gives a float."""
    if isinstance(predictions, torch.Tensor):
        if predictions.shape != targets.shape:
            raise LengthMismatch(f"{tuple(predictions.shape)} vs {tuple(targets.shape)}")
        if predictions.numel() == 0:
            raise EmptyBatch("empty batch")
        return (predictions - targets).abs().mean()
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise EmptyBatch("empty batch")
    return float(np.mean(np.abs(p - t)))


def _trainable(params):
    if isinstance(params, ModelBundle):
        params = params.net
    if isinstance(params, torch.nn.Module):
        return [p for p in params.parameters() if p.requires_grad]
    return list(params)


def regularized_loss(base, params, lam: float):
    """``base + lam * sum(w**2)`` over all trainable weights."""
    if lam < 0:
        raise InvalidConfig("weight decay must be >= 0")
    if lam == 0:
        return base
    sq = sum((p * p).sum() for p in _trainable(params))
    if isinstance(base, torch.Tensor):
        return base + lam * sq
    return base + lam * float(sq.detach())


# --------------------------------------------------------------------------- #
# Batching
# --------------------------------------------------------------------------- #
def collate(samples: list, dtype=torch.float32):
    if not samples:
        raise EmptyBatch("empty batch")
    shapes = {s.shape for s in samples}
    if len(shapes) > 1:
        raise MixedSizeBatch(f"batch mixes image sizes {sorted(shapes)}; set crop_size")
    x = torch.as_tensor(np.stack([s.pixels.transpose(2, 0, 1) for s in samples]), dtype=dtype)
    y = torch.tensor([s.score for s in samples], dtype=dtype)
    return x, y


def crop_seed(seed: int, epoch: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, index]).generate_state(1)[0])


def _batches(dataset: ImageDataset, config: TrainConfig, epoch: int):
    """Index batches for one epoch, order fixed by (seed, epoch)."""
    rng = np.random.default_rng([config.seed, epoch])
    order = rng.permutation(len(dataset))
    bs = config.batch_size
    if config.bucket_by_size and config.crop_size is None:
        buckets: dict = {}
        for i in order:
            buckets.setdefault(dataset[int(i)].shape, []).append(int(i))
        out = []
        for shape in sorted(buckets):
            idx = buckets[shape]
            out += [idx[k:k + bs] for k in range(0, len(idx), bs)]
        return [out[j] for j in rng.permutation(len(out))]
    return [[int(i) for i in order[k:k + bs]] for k in range(0, len(order), bs)]


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (epoch, mean_loss, lr)
    accessed: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "lr"])
            for e, loss, lr in self.rows:
                w.writerow([e, repr(loss), repr(lr)])

    @property
    def losses(self):
        return [r[1] for r in self.rows]


class _ProbCache:
    """Superpixel maps for the non-differentiable slic backend.

    Keys are (index, crop seed); only uncropped maps (crop seed None) are kept,
    since random crops never repeat across epochs.
    """

    def __init__(self, net):
        self.net = net
        self.store: dict = {}

    def get(self, keys, x):
        missing = [k for k in keys if k not in self.store]
        if not missing:
            return torch.stack([self.store[k] for k in keys])
        fresh = dict(zip(missing, self.net.superpixel_probs(x[[keys.index(k) for k in missing]])))
        for k, p in fresh.items():
            if k[1] is None:
                self.store[k] = p
        return torch.stack([self.store[k] if k in self.store else fresh[k] for k in keys])


def fit(bundle: ModelBundle, dataset: ImageDataset, config: TrainConfig) -> TrainLog:
    """Train ``bundle`` in place on every sample of ``dataset``."""
    config.validate()
    if len(dataset) == 0:
        raise EmptySplit("training split is empty")
    net = bundle.net
    dtype = next(net.parameters()).dtype
    scores = np.array([e.score for e in dataset.manifest.entries])
    with torch.no_grad():
        net.predictor.offset.fill_(float(scores.mean()))
        net.predictor.scale.fill_(float(scores.std()) if scores.std() > 0 else 1.0)
    for p in net.backbone.trunk.parameters():
        p.requires_grad_(not config.freeze_backbone)
    params = [p for p in net.parameters() if p.requires_grad]
    torch.manual_seed(config.seed)
    opt = torch.optim.Adam(params, lr=config.learning_rate)
    sched = None
    if config.lr_schedule == "step":
        sched = torch.optim.lr_scheduler.StepLR(opt, config.lr_step_epochs, config.lr_gamma)
    segc = bundle.config.segmenter
    use_cache = net.needs_probs and segc.backend == "slic"
    cache = _ProbCache(net) if use_cache else None
    fixed = bundle.config.variant == "baseline-fixed"
    crop = tuple(bundle.config.fixed_size) if fixed else config.crop_size
    tlog = TrainLog()

    for epoch in range(1, config.epochs + 1):
        net.train()
        if config.freeze_backbone:
            net.backbone.trunk.eval()
        total, count = 0.0, 0
        for batch in _batches(dataset, config, epoch):
            samples, keys = [], []
            for i in batch:
                s = dataset[i]
                if crop is not None:
                    cs = crop_seed(config.seed, epoch, i)
                    s = random_crop(s, crop, cs)
                    keys.append((i, cs))
                else:
                    keys.append((i, None))
                samples.append(s)
            x, y = collate(samples, dtype)
            probs = cache.get(keys, x) if cache is not None else None
            pred, probs = net(x, probs=probs, return_probs=True)
            base = l1_loss(pred, y)
            loss = regularized_loss(base, params, config.weight_decay)
            if segc.backend == "cnn" and segc.tv_weight > 0 and probs is not None:
                loss = loss + segc.tv_weight * total_variation(probs)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(base.detach()) * len(batch)
            count += len(batch)
        lr = opt.param_groups[0]["lr"]
        tlog.rows.append((epoch, total / count, lr))
        log.debug("epoch %d mean_l1=%.6f lr=%.3g", epoch, total / count, lr)
        if sched is not None:
            sched.step()
    net.eval()
    tlog.accessed = sorted(set(dataset.access_log))
    return tlog


def train(manifest: DatasetManifest, split, config: TrainConfig,
          model_config: Optional[ModelConfig] = None):
    """Build a bundle from ``config.seed`` and fit it on the training part of ``split``.

    ``split`` is a SplitSpec (the train half is used) or None for the whole manifest.
    """
    if split is not None:
        from .protocols import split as do_split

        manifest, _ = do_split(manifest, split)
    if len(manifest) == 0:
        raise EmptySplit("training split is empty")
    model_config = model_config or ModelConfig()
    bundle = build_bundle(model_config, config.seed, config.torch_dtype)
    tlog = fit(bundle, ImageDataset(manifest), config)
    return bundle, tlog


def score_dataset(bundle: ModelBundle, dataset: ImageDataset) -> np.ndarray:
    """Predicted scores at original image sizes, one image at a time."""
    from .predictor import forward

    return np.array([forward(s, bundle) for s in dataset])


# --------------------------------------------------------------------------- #
# Checkpoints
# --------------------------------------------------------------------------- #
def _config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def _config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    d["backbone"] = BackboneConfig(**d["backbone"])
    d["segmenter"] = SegmenterConfig(**d["segmenter"])
    return ModelConfig(**d)


def _digest(meta: dict, arrays: dict) -> str:
    h = hashlib.sha256(json.dumps(meta, sort_keys=True).encode("utf-8"))
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(arrays[name])
    return h.hexdigest()


def save_checkpoint(bundle: ModelBundle, path, format_version: Optional[int] = None) -> None:
    """Zip archive: ``metadata.json`` + one ``params/<name>`` raw '<f4' array per tensor."""
    arrays, tensors = {}, {}
    for name, t in bundle.net.state_dict().items():
        arrays[name] = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4").tobytes()
        tensors[name] = {"shape": list(t.shape), "dtype": str(t.dtype).replace("torch.", "")}
    meta = {
        "format_version": bundle.format_version if format_version is None else format_version,
        "config": _config_to_dict(bundle.config),
        "seed": bundle.seed,
        "tensors": tensors,
    }
    meta["digest"] = _digest(meta, arrays)
    def entry(name):
        # fixed timestamp: identical runs give byte-identical files
        return zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))

    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr(entry("metadata.json"), json.dumps(meta, indent=1, sort_keys=True))
        for name, data in arrays.items():
            zf.writestr(entry(f"params/{name}"), data)


def load_checkpoint(path, dtype=torch.float32) -> ModelBundle:
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("metadata.json").decode("utf-8"))
            arrays = {name: zf.read(f"params/{name}") for name in meta["tensors"]}
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint ({exc})") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format_version {meta.get('format_version')} != {FORMAT_VERSION}")
    digest = meta.pop("digest", None)
    if digest != _digest(meta, arrays):
        raise CorruptCheckpoint(f"{path}: integrity digest mismatch")
    config = _config_from_dict(meta["config"])
    bundle = build_bundle(config, meta.get("seed") or 0, dtype)
    state = {}
    for name, info in meta["tensors"].items():
        arr = np.frombuffer(arrays[name], dtype="<f4").reshape(info["shape"])
        t = torch.from_numpy(arr.copy())
        state[name] = t.to(getattr(torch, info["dtype"]))
    bundle.net.load_state_dict(state)
    bundle.net.to(dtype)
    bundle.net.eval()
    return bundle
