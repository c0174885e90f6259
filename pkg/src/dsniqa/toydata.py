"""Synthetic quality datasets for desk-scale runs and tests.

Each reference is a random smooth scene (blobs and gradients). Distorted
versions apply blur, noise or blockiness at graded levels; the score falls
linearly with distortion strength, so quality is learnable from pixels.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .imaging import DatasetManifest, ManifestEntry, write_manifest

DISTORTIONS = ("blur", "noise", "block")


def reference_scene(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.zeros((h, w, 3))
    img += rng.random(3) * 0.4 + (xx[..., None] * rng.normal(0, 0.3, 3))
    for _ in range(rng.integers(4, 9)):
        cy, cx = rng.random(2) * (h / max(h, w), w / max(h, w))
        r = rng.uniform(0.05, 0.25)
        mask = ((yy - cy) ** 2 + (xx - cx) ** 2) < r ** 2
        img[mask] = rng.random(3)
    # fine texture so blur is visible
    img += 0.08 * np.sin(xx[..., None] * rng.uniform(40, 90)) * np.cos(yy[..., None] * 60)
    return np.clip(img, 0, 1)


def distort(img: np.ndarray, kind: str, level: float, rng: np.random.Generator) -> np.ndarray:
    """``level`` in [0, 1]; 0 leaves the image untouched."""
    if level == 0:
        return img
    if kind == "blur":
        out = gaussian_filter(img, sigma=(3.0 * level, 3.0 * level, 0))
    elif kind == "noise":
        out = img + rng.normal(0, 0.25 * level, img.shape)
    elif kind == "block":
        b = max(1, int(round(1 + 7 * level)))
        h, w = img.shape[:2]
        small = img[::b, ::b]
        out = np.repeat(np.repeat(small, b, 0), b, 1)[:h, :w]
    else:
        raise ValueError(kind)
    return np.clip(out, 0, 1)


def make_dataset(out_dir, n_refs: int = 10, levels=(0.0, 0.33, 0.66, 1.0),
                 kinds=DISTORTIONS, size=(64, 64), seed: int = 0,
                 name: str = "toy") -> DatasetManifest:
    """Write PNGs plus ``manifest.csv`` under ``out_dir``; scores lie in [0, 100]."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for r in range(n_refs):
        ref = reference_scene(rng, *size)
        for kind in kinds:
            for level in levels:
                img = distort(ref, kind, level, rng)
                path = out / f"ref{r:03d}_{kind}_{int(level * 100):03d}.png"
                Image.fromarray((img * 255).round().astype(np.uint8)).save(path)
                score = 100.0 * (1.0 - level) * 0.9 + 5.0 + rng.normal(0, 1.0)
                entries.append(ManifestEntry(str(path), float(np.clip(score, 0, 100)),
                                             kind, f"ref{r:03d}"))
    manifest = DatasetManifest(entries, (0.0, 100.0), name)
    # file names only on disk, so the directory can be moved
    write_manifest(DatasetManifest([replace(e, image_path=Path(e.image_path).name)
                                    for e in entries], (0.0, 100.0), name),
                   out / "manifest.csv")
    return manifest
