"""Superpixel map generation net: probability map -> adjacency weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimMismatch, ParamShapeMismatch
from .superpixel import SuperpixelProbMap


@dataclass
class AdjacencyMap:
    local_weights: list  # [A1, A2, A3]
    holistic_weights: np.ndarray


class SPMapNet(nn.Module):
    """3x3 conv stack -> adaptive max pooling -> local and holistic branches.

    The local branch is one shared trunk with a projection per scale.
    """

    def __init__(self, n_superpixels: int, local_dims, holistic_dim: int,
                 conv_channels=(64, 64, 64), pool_size=(7, 7), branch_hidden: int = 256):
        super().__init__()
        widths = [n_superpixels, *conv_channels]
        self.convs = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, padding=1) for i in range(len(conv_channels)))
        self.n_superpixels = n_superpixels
        self.pool_size = tuple(pool_size)
        flat = widths[-1] * self.pool_size[0] * self.pool_size[1]
        self.local_trunk = nn.Linear(flat, branch_hidden)
        self.local_proj = nn.ModuleList(nn.Linear(branch_hidden, d) for d in local_dims)
        self.holistic_trunk = nn.Linear(flat, branch_hidden)
        self.holistic_proj = nn.Linear(branch_hidden, holistic_dim)

    @property
    def dims(self):
        return tuple(p.out_features for p in self.local_proj), self.holistic_proj.out_features

    def forward(self, probs: torch.Tensor):
        """probs: B x N x H x W  ->  ([A1, A2, A3], A_F)."""
        if probs.shape[1] != self.n_superpixels:
            raise ParamShapeMismatch(
                f"map has {probs.shape[1]} channels, net expects {self.n_superpixels}")
        h = probs
        for conv in self.convs:
            h = F.relu(conv(h))
        h = F.adaptive_max_pool2d(h, self.pool_size).flatten(1)
        t = F.relu(self.local_trunk(h))
        locs = [proj(t) for proj in self.local_proj]
        hol = self.holistic_proj(F.relu(self.holistic_trunk(h)))
        return locs, hol


def generate_adjacency(spmap: SuperpixelProbMap, params: SPMapNet, dims) -> AdjacencyMap:
    local_dims, holistic_dim = dims
    if params.dims != (tuple(local_dims), holistic_dim):
        raise DimMismatch(f"net emits {params.dims}, requested {(tuple(local_dims), holistic_dim)}")
    dtype = next(params.parameters()).dtype
    x = torch.as_tensor(np.ascontiguousarray(spmap.probs.transpose(2, 0, 1)), dtype=dtype)[None]
    with torch.no_grad():
        locs, hol = params(x)
    return AdjacencyMap([a[0].numpy() for a in locs], hol[0].numpy())
