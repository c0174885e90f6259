"""Deep superpixel-based blind image quality assessment."""
import os

import torch

# oneDNN conv kernels corrupt the heap intermittently on this CPU build of
# torch during backward; the native kernels are slower but stable.
if not os.environ.get("DSNIQA_ALLOW_ONEDNN"):
    torch.backends.mkldnn.enabled = False

from .backbone import BackboneConfig, MultiScaleFeatures, adaptive_pool, extract
from .imaging import DatasetManifest, ImageSample, load_manifest, random_crop
from .metrics import EvalReport, plcc, srcc
from .predictor import ModelBundle, ModelConfig, build_bundle, forward, fuse, predict
from .protocols import ExperimentConfig, SplitSpec, run_experiment, split
from .spmapnet import AdjacencyMap, generate_adjacency
from .superpixel import SegmenterConfig, SuperpixelProbMap, segment, to_label_map
from .training import (
    TrainConfig,
    l1_loss,
    load_checkpoint,
    regularized_loss,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
