import numpy as np
import pytest
import torch

from dsniqa.backbone import BackboneConfig
from dsniqa.imaging import ImageSample
from dsniqa.predictor import ModelConfig
from dsniqa.superpixel import SegmenterConfig
from dsniqa.toydata import make_dataset

ACCEPTANCE_LINES = []


def small_model_config(backend="cnn", variant="full", n=16, **kw):
    """A few-hundred-k parameter model that runs quickly on one CPU core."""
    return ModelConfig(
        backbone=BackboneConfig(local_dims=(24, 24, 24), holistic_dim=48,
                                adaptive_pool_size=(4, 4), head_channels=16),
        segmenter=SegmenterConfig(backend=backend, n_superpixels=n, cnn_channels=[8, 8, 16, 16]),
        variant=variant, spmap_channels=(16, 16, 16), spmap_pool_size=(4, 4),
        spmap_hidden=48, head_hidden=32, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_image(rng):
    def _make(h, w, score=50.0, **kw):
        return ImageSample(rng.random((h, w, 3)).astype(np.float32), score, **kw)
    return _make


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    make_dataset(d, n_refs=5, levels=(0.0, 0.5, 1.0), kinds=("blur", "noise"), size=(48, 48),
                 seed=7)
    return d


@pytest.fixture
def toy_manifest(toy_dir):
    from dsniqa.imaging import load_manifest

    return load_manifest(toy_dir / "manifest.csv", score_scale=(0.0, 100.0))


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
