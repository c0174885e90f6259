"""Superpixel probability maps.

Two backends produce an ``H x W x N`` membership map:

* ``slic``: iterative clustering over (CIELAB colour, position) with a
  compactness weight; gives hard one-hot maps.
* ``cnn``: five 3x3 convolutions followed by a per-pixel softmax over the N
  channels; differentiable, trained jointly with the quality loss.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from skimage.color import rgb2lab

from .errors import BackendParamsMissing, InvalidConfig
from .imaging import ImageSample

BLOB_MAGIC = b"SPXL1"


@dataclass
class SegmenterConfig:
    backend: str = "slic"
    n_superpixels: int = 100
    slic_compactness: float = 10.0
    slic_iterations: int = 10
    cnn_channels: list = field(default_factory=lambda: [32, 32, 64, 64])
    tv_weight: float = 0.0

    def __post_init__(self):
        self.cnn_channels = list(self.cnn_channels)

    def validate(self) -> None:
        if self.backend not in ("slic", "cnn"):
            raise InvalidConfig(f"unknown segmenter backend {self.backend!r}")
        if self.n_superpixels < 1:
            raise InvalidConfig("n_superpixels must be >= 1")
        if self.slic_iterations < 1:
            raise InvalidConfig("slic_iterations must be >= 1")
        if not self.slic_compactness > 0:
            raise InvalidConfig("slic_compactness must be > 0")
        if len(self.cnn_channels) != 4:
            raise InvalidConfig("cnn_channels lists the 4 hidden widths of the 5-layer net")


@dataclass
class SuperpixelProbMap:
    probs: np.ndarray  # H x W x N
    n_superpixels: int

    @property
    def shape(self):
        return self.probs.shape


def _pixels(image) -> np.ndarray:
    if isinstance(image, ImageSample):
        return image.pixels
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    return arr


# --------------------------------------------------------------------------- #
# SLIC
# --------------------------------------------------------------------------- #
def grid_seeds(height: int, width: int, n: int) -> np.ndarray:
    """Regular grid of at most ``n`` seed positions (row, col), spacing ~sqrt(HW/n)."""
    rows = max(1, min(height, int(round(np.sqrt(n * height / width)))))
    cols = max(1, min(width, n // rows))
    ys = (np.arange(rows) + 0.5) * height / rows - 0.5
    xs = (np.arange(cols) + 0.5) * width / cols - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def slic_labels(rgb: np.ndarray, n_superpixels: int = 100, compactness: float = 10.0,
                iterations: int = 10) -> np.ndarray:
    """SLIC label map; every pixel gets one label in ``[0, n_superpixels)``.

    Assignment searches a 2S x 2S window around each centre, S = sqrt(HW/N).
    Centres that lose all their pixels keep their previous position.
    """
    H, W = rgb.shape[:2]
    lab = rgb2lab(np.clip(rgb, 0.0, 1.0).astype(np.float64))
    step = np.sqrt(H * W / n_superpixels)
    spatial_w = (compactness / step) ** 2

    pos = grid_seeds(H, W, n_superpixels)
    iy = np.clip(np.round(pos[:, 0]).astype(int), 0, H - 1)
    ix = np.clip(np.round(pos[:, 1]).astype(int), 0, W - 1)
    centers = np.concatenate([pos, lab[iy, ix]], axis=1)  # (K, 5): y, x, L, a, b

    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    labels = np.zeros((H, W), dtype=np.int64)
    radius = int(np.ceil(2 * step))
    for _ in range(iterations):
        best = np.full((H, W), np.inf)
        for k, (cy, cx, L, a, b) in enumerate(centers):
            y0, y1 = max(int(np.floor(cy)) - radius, 0), min(int(np.ceil(cy)) + radius + 1, H)
            x0, x1 = max(int(np.floor(cx)) - radius, 0), min(int(np.ceil(cx)) + radius + 1, W)
            win = lab[y0:y1, x0:x1]
            dc = (win[..., 0] - L) ** 2 + (win[..., 1] - a) ** 2 + (win[..., 2] - b) ** 2
            ds = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
            d = dc + spatial_w * ds
            region = best[y0:y1, x0:x1]
            upd = d < region
            region[upd] = d[upd]
            labels[y0:y1, x0:x1][upd] = k
        # centre update
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=len(centers)).astype(np.float64)
        feats = np.concatenate(
            [yy.reshape(-1, 1), xx.reshape(-1, 1), lab.reshape(-1, 3)], axis=1)
        sums = np.zeros_like(centers)
        np.add.at(sums, flat, feats)
        moved = counts > 0
        new = centers.copy()
        new[moved] = sums[moved] / counts[moved, None]
        if np.allclose(new, centers, atol=1e-10, rtol=0):
            centers = new
            break
        centers = new
    return labels


def labels_to_onehot(labels: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(labels.shape + (n,), dtype=np.float32)
    np.put_along_axis(out, labels[..., None], 1.0, axis=2)
    return out


# --------------------------------------------------------------------------- #
# CNN backend
# --------------------------------------------------------------------------- #
class CNNSegmenter(nn.Module):
    """Five 3x3 convolutions ending in N channels, softmax-normalised per pixel.

    Input is the image plus two normalised coordinate channels, so the net can
    learn spatially compact memberships.
    """

    def __init__(self, n_superpixels: int = 100, channels=(32, 32, 64, 64)):
        super().__init__()
        widths = [5, *channels, n_superpixels]
        self.convs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, padding=1) for i in range(5))
        self.n_superpixels = n_superpixels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: B x 3 x H x W in [0, 1]  ->  B x N x H x W probabilities."""
        B, _, H, W = x.shape
        ys = torch.linspace(-1.0, 1.0, H, dtype=x.dtype, device=x.device)
        xs = torch.linspace(-1.0, 1.0, W, dtype=x.dtype, device=x.device)
        grid = torch.stack(torch.meshgrid(ys, xs, indexing="ij")).expand(B, 2, H, W)
        h = torch.cat([x, grid], dim=1)
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = F.relu(h)
        return torch.softmax(h, dim=1)


def total_variation(probs: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between neighbouring pixels of a B x N x H x W map."""
    dy = (probs[:, :, 1:, :] - probs[:, :, :-1, :]).abs().mean()
    dx = (probs[:, :, :, 1:] - probs[:, :, :, :-1]).abs().mean()
    return dy + dx


# --------------------------------------------------------------------------- #
# Public operations
# --------------------------------------------------------------------------- #
def segment(image: Union[ImageSample, np.ndarray], config: SegmenterConfig,
            params: Optional[CNNSegmenter] = None) -> SuperpixelProbMap:
    config.validate()
    rgb = _pixels(image)
    n = config.n_superpixels
    if config.backend == "slic":
        if n == 1:
            probs = np.ones(rgb.shape[:2] + (1,), dtype=np.float32)
        else:
            labels = slic_labels(rgb, n, config.slic_compactness, config.slic_iterations)
            probs = labels_to_onehot(labels, n)
        return SuperpixelProbMap(probs, n)
    if params is None:
        raise BackendParamsMissing("cnn backend requires segmenter parameters")
    if params.n_superpixels != n:
        raise InvalidConfig(f"segmenter built for N={params.n_superpixels}, config says N={n}")
    dtype = next(params.parameters()).dtype
    x = torch.as_tensor(np.ascontiguousarray(rgb.transpose(2, 0, 1)), dtype=dtype)[None]
    with torch.no_grad():
        p = params(x)[0].permute(1, 2, 0).cpu().numpy()
    return SuperpixelProbMap(p, n)


def segment_batch(x: torch.Tensor, config: SegmenterConfig,
                  params: Optional[CNNSegmenter] = None) -> torch.Tensor:
    """Batched, tensor-level counterpart of :func:`segment` (B x N x H x W)."""
    if config.backend == "cnn":
        if params is None:
            raise BackendParamsMissing("cnn backend requires segmenter parameters")
        return params(x)
    maps = []
    for img in x.detach().cpu().numpy():
        m = segment(img.transpose(1, 2, 0), config).probs
        maps.append(torch.from_numpy(m.transpose(2, 0, 1).copy()))
    return torch.stack(maps).to(dtype=x.dtype, device=x.device)


def to_label_map(spmap: SuperpixelProbMap) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the lowest channel
    return np.argmax(spmap.probs, axis=2).astype(np.int64)


def palette(n: int = 256) -> np.ndarray:
    i = np.arange(n)
    return np.stack([(i * 97 + 31) % 256, (i * 57 + 101) % 256, (i * 151 + 7) % 256],
                    axis=1).astype(np.uint8)


def label_map_to_rgb(labels: np.ndarray) -> np.ndarray:
    return palette()[labels % 256]


def write_prob_blob(spmap: SuperpixelProbMap, path) -> None:
    H, W, N = spmap.probs.shape
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<III", H, W, N))
        fh.write(np.ascontiguousarray(spmap.probs, dtype="<f4").tobytes())


def read_prob_blob(path) -> SuperpixelProbMap:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:5] != BLOB_MAGIC:
        raise InvalidConfig(f"{path}: not an SPXL1 blob")
    H, W, N = struct.unpack("<III", data[5:17])
    probs = np.frombuffer(data[17:], dtype="<f4")
    if probs.size != H * W * N:
        raise InvalidConfig(f"{path}: truncated blob")
    return SuperpixelProbMap(probs.reshape(H, W, N).copy(), N)
