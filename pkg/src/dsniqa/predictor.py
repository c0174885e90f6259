"""Feature fusion, the regression head, and the composed quality model.

The full model runs three steps: multi-scale features from the backbone,
an adjacency map from the superpixel probabilities, then element-wise
fusion followed by fully connected layers.

``ModelConfig.variant`` selects the ablation rows:

==================  ==========================================================
baseline-fixed      trunk + global average pooling, fixed-size input
baseline-arbitrary  trunk + adaptive-pooled holistic head, any input size
multi-only          adds the three local tap heads
full                adds superpixel map generation and multiplicative fusion
==================  ==========================================================
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Backbone, BackboneConfig, MultiScaleFeatures, image_tensor
from .errors import DimMismatch, InvalidConfig
from .imaging import ImageSample, center_crop
from .spmapnet import AdjacencyMap, SPMapNet
from .superpixel import CNNSegmenter, SegmenterConfig, segment_batch

VARIANTS = ("baseline-fixed", "baseline-arbitrary", "multi-only", "full")
FORMAT_VERSION = 1


# --------------------------------------------------------------------------- #
# Fusion and head
# --------------------------------------------------------------------------- #
def fuse(features: MultiScaleFeatures, adjacency: AdjacencyMap) -> np.ndarray:
    """Concatenate ``[L1*A1, L2*A2, L3*A3, F*A_F]``."""
    pairs = list(zip(features.locals, adjacency.local_weights))
    if len(features.locals) != len(adjacency.local_weights):
        raise DimMismatch("feature and adjacency scale counts differ")
    pairs.append((features.holistic, adjacency.holistic_weights))
    parts = []
    for f, a in pairs:
        f, a = np.asarray(f), np.asarray(a)
        if f.shape != a.shape:
            raise DimMismatch(f"feature width {f.shape} vs adjacency width {a.shape}")
        parts.append(f * a)
    return np.concatenate(parts)


def fuse_tensors(locs, hol, adj_locs=None, adj_hol=None) -> torch.Tensor:
    if adj_hol is None:
        return torch.cat([*locs, hol], dim=1)
    if len(locs) != len(adj_locs):
        raise DimMismatch("feature and adjacency scale counts differ")
    parts = []
    for f, a in zip([*locs, hol], [*adj_locs, adj_hol]):
        if f.shape != a.shape:
            raise DimMismatch(f"feature width {tuple(f.shape)} vs adjacency {tuple(a.shape)}")
        parts.append(f * a)
    return torch.cat(parts, dim=1)


class PredictorHead(nn.Module):
    """fused_dim -> hidden -> 1, ReLU in between.

    The output is mapped to database units through fixed buffers
    ``offset + scale * y``, set from the training labels before training
    (identity by default).
    """

    def __init__(self, in_dim: int, hidden: int = 128):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)
        self.register_buffer("offset", torch.zeros(()))
        self.register_buffer("scale", torch.ones(()))

    @property
    def in_dim(self) -> int:
        return self.fc1.in_features

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        if fused.shape[-1] != self.in_dim:
            raise DimMismatch(f"fused length {fused.shape[-1]} != head width {self.in_dim}")
        y = self.fc2(F.relu(self.fc1(fused))).squeeze(-1)
        return self.offset.to(y.dtype) + self.scale.to(y.dtype) * y


def predict(fused, params: PredictorHead):
    """Score one fused vector (returns float) or a B x D batch (returns array)."""
    dtype = next(params.parameters()).dtype
    x = torch.as_tensor(np.asarray(fused), dtype=dtype)
    with torch.no_grad():
        if x.ndim == 1:
            return float(params(x[None])[0])
        return params(x).numpy()


# --------------------------------------------------------------------------- #
# Composed model
# --------------------------------------------------------------------------- #
@dataclass
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    variant: str = "full"
    spmap_channels: tuple = (64, 64, 64)
    spmap_pool_size: tuple = (7, 7)
    spmap_hidden: int = 256
    head_hidden: int = 128
    fixed_size: tuple = (224, 224)

    def __post_init__(self):
        self.spmap_channels = tuple(self.spmap_channels)
        self.spmap_pool_size = tuple(self.spmap_pool_size)
        self.fixed_size = tuple(self.fixed_size)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        self.backbone.validate()
        self.segmenter.validate()


class DSNIQA(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        bc, v = config.backbone, config.variant
        self.backbone = Backbone(bc, multi_scale=v in ("multi-only", "full"))
        if v == "baseline-fixed":
            del self.backbone.holistic_head
            self.backbone.holistic_head = None
            in_dim = self.backbone.trunk.out_channels[-1]
        elif v == "baseline-arbitrary":
            in_dim = bc.holistic_dim
        else:
            in_dim = sum(bc.local_dims) + bc.holistic_dim
        self.spmapnet = None
        self.segmenter = None
        if v == "full":
            sc = config.segmenter
            self.spmapnet = SPMapNet(sc.n_superpixels, bc.local_dims, bc.holistic_dim,
                                     config.spmap_channels, config.spmap_pool_size,
                                     config.spmap_hidden)
            if sc.backend == "cnn":
                self.segmenter = CNNSegmenter(sc.n_superpixels, sc.cnn_channels)
        self.predictor = PredictorHead(in_dim, config.head_hidden)

    @property
    def needs_probs(self) -> bool:
        return self.config.variant == "full"

    def superpixel_probs(self, x: torch.Tensor) -> torch.Tensor:
        return segment_batch(x, self.config.segmenter, self.segmenter)

    def features(self, x):
        if self.config.variant == "baseline-fixed":
            outs = self.backbone.trunk(self.backbone.standardize(x))
            return [], outs[-1].mean(dim=(2, 3))
        return self.backbone(x)

    def forward(self, x: torch.Tensor, probs: Optional[torch.Tensor] = None,
                return_probs: bool = False):
        """x: B x 3 x H x W in [0, 1] -> B scores.

        ``probs`` may carry precomputed superpixel maps (slic backend caching).
        """
        locs, hol = self.features(x)
        if self.needs_probs:
            if probs is None:
                probs = self.superpixel_probs(x)
            adj_locs, adj_hol = self.spmapnet(probs)
            fused = fuse_tensors(locs, hol, adj_locs, adj_hol)
        else:
            fused = fuse_tensors(locs, hol)
        scores = self.predictor(fused)
        return (scores, probs) if return_probs else scores


@dataclass
class ModelBundle:
    """Configs plus the parameter sets of every sub-network."""

    config: ModelConfig
    net: DSNIQA
    format_version: int = FORMAT_VERSION
    seed: Optional[int] = None

    @property
    def backbone_params(self):
        return self.net.backbone

    @property
    def spmapnet_params(self):
        return self.net.spmapnet

    @property
    def predictor_params(self):
        return self.net.predictor

    @property
    def segmenter_params(self):
        return self.net.segmenter

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def build_bundle(config: ModelConfig, seed: int = 0, dtype=torch.float32) -> ModelBundle:
    torch.manual_seed(seed)
    net = DSNIQA(config).to(dtype)
    return ModelBundle(config, net, seed=seed)


def prepare_input(image: ImageSample, bundle: ModelBundle) -> ImageSample:
    if bundle.config.variant == "baseline-fixed":
        return center_crop(image, bundle.config.fixed_size)
    return image


def forward(image: ImageSample, bundle: ModelBundle) -> float:
    """Score one image at its original size (fixed baseline: centre crop)."""
    image = prepare_input(image, bundle)
    dtype = next(bundle.net.parameters()).dtype
    bundle.net.eval()
    with torch.no_grad():
        return float(bundle.net(image_tensor(image, dtype))[0])
