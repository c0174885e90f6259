"""Image decoding, deterministic cropping and CSV manifests."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image

from .errors import (
    CropTooLarge,
    EmptyManifest,
    InvalidSample,
    MissingColumn,
    UnparsableScore,
)

MIN_SIZE = 32
MANIFEST_COLUMNS = ("image_path", "score", "distortion_type", "reference_id")


@dataclass(frozen=True)
class ImageSample:
    """A decoded RGB image in [0, 1] with its ground-truth score."""

    pixels: np.ndarray
    score: float
    distortion_type: Optional[str] = None
    reference_id: Optional[str] = None
    source_path: str = ""

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise InvalidSample(f"pixels must be HxWx3, got {px.shape}")
        if px.shape[0] < MIN_SIZE or px.shape[1] < MIN_SIZE:
            raise InvalidSample(f"image {px.shape[:2]} smaller than {MIN_SIZE}x{MIN_SIZE}")
        if px.size and (px.min() < 0.0 or px.max() > 1.0):
            raise InvalidSample("pixel values must lie in [0, 1]")
        if not math.isfinite(self.score):
            raise InvalidSample("score must be finite")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    score: float
    distortion_type: Optional[str] = None
    reference_id: Optional[str] = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    score_scale: tuple[float, float]
    name: str = ""

    def __len__(self) -> int:
        return len(self.entries)

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "DatasetManifest":
        # the declared scale is kept so that percentages stay comparable
        return DatasetManifest(
            [self.entries[i] for i in indices], self.score_scale, name or self.name
        )

    @property
    def score_range(self) -> float:
        lo, hi = self.score_scale
        return hi - lo


def _opt(cell: Optional[str]) -> Optional[str]:
    if cell is None:
        return None
    cell = cell.strip()
    return cell or None


def load_manifest(path, score_scale: Optional[tuple[float, float]] = None,
                  name: Optional[str] = None) -> DatasetManifest:
    """Parse a UTF-8 CSV manifest.

    Relative image paths are resolved against the manifest's directory. When
    ``score_scale`` is not given, the observed min/max of the scores is used.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in ("image_path", "score"):
            if col not in header:
                raise MissingColumn(f"{path}: header lacks '{col}'")
        reader.fieldnames = header
        entries = []
        for lineno, row in enumerate(reader, start=2):
            raw = (row.get("score") or "").strip()
            try:
                score = float(raw)
            except ValueError:
                raise UnparsableScore(f"{path}:{lineno}: score {raw!r} is not numeric") from None
            if not math.isfinite(score):
                raise UnparsableScore(f"{path}:{lineno}: score {raw!r} is not finite")
            img = row["image_path"].strip()
            if not os.path.isabs(img):
                img = str(path.parent / img)
            entries.append(ManifestEntry(img, score, _opt(row.get("distortion_type")),
                                         _opt(row.get("reference_id"))))
    if not entries:
        raise EmptyManifest(f"{path}: no data rows")
    scores = [e.score for e in entries]
    if score_scale is None:
        score_scale = (min(scores), max(scores))
    elif min(scores) < score_scale[0] or max(scores) > score_scale[1]:
        raise UnparsableScore(f"{path}: scores fall outside declared scale {score_scale}")
    return DatasetManifest(entries, (float(score_scale[0]), float(score_scale[1])),
                           name or path.stem)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(MANIFEST_COLUMNS)
        for e in manifest.entries:
            w.writerow([e.image_path, repr(e.score), e.distortion_type or "", e.reference_id or ""])


def decode_image(path) -> np.ndarray:
    """Decode to 8-bit RGB then scale to float32 in [0, 1]; gray is replicated."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    return arr.astype(np.float32) / 255.0


def load_sample(entry: ManifestEntry) -> ImageSample:
    return ImageSample(decode_image(entry.image_path), entry.score,
                       entry.distortion_type, entry.reference_id, entry.image_path)


def random_crop(sample: ImageSample, size: tuple[int, int], seed: int) -> ImageSample:
    """Contiguous ``size`` window at a position drawn from ``seed``."""
    h, w = size
    H, W = sample.shape
    if h > H or w > W:
        raise CropTooLarge(f"crop {h}x{w} exceeds image {H}x{W}")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, H - h + 1))
    left = int(rng.integers(0, W - w + 1))
    return replace(sample, pixels=sample.pixels[top:top + h, left:left + w])


def center_crop(sample: ImageSample, size: tuple[int, int]) -> ImageSample:
    h, w = size
    H, W = sample.shape
    if h > H or w > W:
        raise CropTooLarge(f"crop {h}x{w} exceeds image {H}x{W}")
    top, left = (H - h) // 2, (W - w) // 2
    return replace(sample, pixels=sample.pixels[top:top + h, left:left + w])


@dataclass
class ImageDataset:
    """Lazily decoded samples of a manifest, with an in-memory cache.

    ``access_log`` records every path decoded through this object, which the
    protocol runner uses to audit train/test separation.
    """

    manifest: DatasetManifest
    cache: bool = True
    access_log: list[str] = field(default_factory=list)
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.manifest)

    def __getitem__(self, i: int) -> ImageSample:
        entry = self.manifest.entries[i]
        self.access_log.append(entry.image_path)
        if self.cache and i in self._cache:
            return self._cache[i]
        s = load_sample(entry)
        if self.cache:
            self._cache[i] = s
        return s

    def __iter__(self) -> Iterator[ImageSample]:
        for i in range(len(self)):
            yield self[i]
