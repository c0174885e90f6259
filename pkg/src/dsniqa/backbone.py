"""Multi-scale semantic features ``[L1, L2, L3, F]`` from images of any size."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import (
    ImageTooSmall,
    InvalidConfig,
    ParamShapeMismatch,
    TargetLargerThanInput,
)
from .imaging import MIN_SIZE, ImageSample

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_DEFAULT_TAPS = {"tiny": (1, 2, 3), "resnet50-pretrained": (2, 3, 4)}
_N_STAGES = {"tiny": 4, "resnet50-pretrained": 5}


@dataclass
class BackboneConfig:
    variant: str = "tiny"
    tap_stages: Optional[tuple] = None  # None -> variant default
    local_dims: tuple = (112, 112, 112)
    holistic_dim: int = 224
    adaptive_pool_size: tuple = (7, 7)
    head_channels: int = 64
    tiny_channels: tuple = (16, 32, 64, 128)
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    weights_path: Optional[str] = None

    def __post_init__(self):
        if self.tap_stages is None and self.variant in _DEFAULT_TAPS:
            self.tap_stages = _DEFAULT_TAPS[self.variant]
        self.tap_stages = tuple(self.tap_stages) if self.tap_stages is not None else None
        self.local_dims = tuple(self.local_dims)
        self.adaptive_pool_size = tuple(self.adaptive_pool_size)
        self.tiny_channels = tuple(self.tiny_channels)
        self.mean, self.std = tuple(self.mean), tuple(self.std)

    def validate(self) -> None:
        if self.variant not in _N_STAGES:
            raise InvalidConfig(f"unknown backbone variant {self.variant!r}")
        taps = self.tap_stages
        if len(taps) != 3 or any(b <= a for a, b in zip(taps, taps[1:])):
            raise InvalidConfig(f"tap_stages must be 3 strictly increasing indices, got {taps}")
        if taps[0] < 1 or taps[-1] >= _N_STAGES[self.variant]:
            raise InvalidConfig(f"tap_stages {taps} outside 1..{_N_STAGES[self.variant] - 1}")
        dims = (*self.local_dims, self.holistic_dim, *self.adaptive_pool_size, self.head_channels)
        if len(self.local_dims) != 3 or min(dims) < 1:
            raise InvalidConfig("all dims must be >= 1 and local_dims must have 3 entries")


@dataclass
class MultiScaleFeatures:
    locals: list  # [L1, L2, L3], each 1-D
    holistic: np.ndarray

    def dims(self):
        return tuple(len(v) for v in self.locals), len(self.holistic)


# --------------------------------------------------------------------------- #
# Adaptive pooling
# --------------------------------------------------------------------------- #
def pool_windows(size: int, target: int) -> list:
    """Half-open windows ``[floor(i*size/target), ceil((i+1)*size/target))``."""
    return [(i * size // target, -((-(i + 1) * size) // target)) for i in range(target)]


def adaptive_pool(feature_map: np.ndarray, target, mode: str = "average") -> np.ndarray:
    """Pool a C x H x W array onto a ``target`` grid."""
    C, H, W = feature_map.shape
    ph, pw = target
    if ph > H or pw > W:
        raise TargetLargerThanInput(f"target {target} larger than input {(H, W)}")
    if mode not in ("average", "max"):
        raise InvalidConfig(f"unknown pooling mode {mode!r}")
    reduce = np.mean if mode == "average" else np.max
    out = np.empty((C, ph, pw), dtype=feature_map.dtype)
    for i, (r0, r1) in enumerate(pool_windows(H, ph)):
        for j, (c0, c1) in enumerate(pool_windows(W, pw)):
            out[:, i, j] = reduce(feature_map[:, r0:r1, c0:c1], axis=(1, 2))
    return out


# --------------------------------------------------------------------------- #
# Networks
# --------------------------------------------------------------------------- #
class BasicBlock(nn.Module):
    """Stride-2 residual block with a 1x1 projection shortcut."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.proj = nn.Conv2d(cin, cout, 1, stride=2)

    def forward(self, x):
        return F.relu(self.conv2(F.relu(self.conv1(x))) + self.proj(x))


class TinyTrunk(nn.Module):
    def __init__(self, channels=(16, 32, 64, 128)):
        super().__init__()
        widths = [3, *channels]
        self.stages = nn.ModuleList(BasicBlock(widths[i], widths[i + 1]) for i in range(4))
        self.out_channels = list(channels)

    def forward(self, x):
        outs = []
        for st in self.stages:
            x = st(x)
            outs.append(x)
        return outs


class ResNet50Trunk(nn.Module):
    """torchvision ResNet-50 split into 5 stages (stem, layer1..layer4)."""

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None)
        self.stages = nn.ModuleList([
            nn.Sequential(net.conv1, net.bn1, net.relu, net.maxpool),
            net.layer1, net.layer2, net.layer3, net.layer4,
        ])
        self.out_channels = [64, 256, 512, 1024, 2048]

    def forward(self, x):
        outs = []
        for st in self.stages:
            x = st(x)
            outs.append(x)
        return outs


class TapHead(nn.Module):
    """1x1 conv -> adaptive average pooling -> fully connected projection."""

    def __init__(self, cin: int, mid: int, pool_size, dim: int):
        super().__init__()
        self.reduce = nn.Conv2d(cin, mid, 1)
        self.pool_size = tuple(pool_size)
        self.fc = nn.Linear(mid * self.pool_size[0] * self.pool_size[1], dim)

    def forward(self, x):
        # deep stages of small inputs can be smaller than the grid; torch
        # replicates cells then, using the same floor/ceil window rule
        h = F.adaptive_avg_pool2d(self.reduce(x), self.pool_size)
        return self.fc(h.flatten(1))


class Backbone(nn.Module):
    """Trunk plus the tap heads; returns ``([L1, L2, L3], F)`` tensors."""

    def __init__(self, config: BackboneConfig, multi_scale: bool = True):
        super().__init__()
        config.validate()
        self.config = config
        self.multi_scale = multi_scale
        if config.variant == "tiny":
            self.trunk = TinyTrunk(config.tiny_channels)
        else:
            self.trunk = ResNet50Trunk()
            if config.weights_path:
                load_backbone_weights(self.trunk, config.weights_path)
        ch = self.trunk.out_channels
        mid, pool = config.head_channels, config.adaptive_pool_size
        if multi_scale:
            self.local_heads = nn.ModuleList(
                TapHead(ch[s - 1], mid, pool, d)
                for s, d in zip(config.tap_stages, config.local_dims))
        else:
            self.local_heads = nn.ModuleList()
        self.holistic_head = TapHead(ch[-1], mid, pool, config.holistic_dim)
        self.register_buffer("mean", torch.tensor(config.mean).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(config.std).view(1, 3, 1, 1))

    def standardize(self, x):
        return (x - self.mean.to(x.dtype)) / self.std.to(x.dtype)

    def forward(self, x):
        if x.shape[-2] < MIN_SIZE or x.shape[-1] < MIN_SIZE:
            raise ImageTooSmall(f"input {tuple(x.shape[-2:])} below {MIN_SIZE}x{MIN_SIZE}")
        if x.shape[1] != 3:
            raise ParamShapeMismatch(f"expected 3 input channels, got {x.shape[1]}")
        outs = self.trunk(self.standardize(x))
        locs = [head(outs[s - 1]) for head, s in zip(self.local_heads, self.config.tap_stages)]
        return locs, self.holistic_head(outs[-1])


def load_backbone_weights(trunk: ResNet50Trunk, path) -> None:
    """Load torchvision-named ResNet-50 weights (``conv1.weight``, ``layer1.0...``)."""
    state = torch.load(path, map_location="cpu", weights_only=True)
    prefix_map = {"conv1.": "0.0.", "bn1.": "0.1."}
    for i in range(1, 5):
        prefix_map[f"layer{i}."] = f"{i}."
    mapped = {}
    for k, v in state.items():
        for src, dst in prefix_map.items():
            if k.startswith(src):
                mapped["stages." + dst + k[len(src):]] = v
                break
    missing, _ = trunk.load_state_dict(mapped, strict=False)
    if missing:
        raise ParamShapeMismatch(f"weight file lacks {len(missing)} tensors, e.g. {missing[0]}")


def image_tensor(image: ImageSample, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(image.pixels.transpose(2, 0, 1)),
                           dtype=dtype)[None]


def extract(image: ImageSample, config: BackboneConfig, params: Backbone) -> MultiScaleFeatures:
    if params.config != config:
        raise ParamShapeMismatch("backbone parameters were built for a different config")
    dtype = next(params.parameters()).dtype
    with torch.no_grad():
        locs, hol = params(image_tensor(image, dtype))
    return MultiScaleFeatures([l[0].numpy() for l in locs], hol[0].numpy())
