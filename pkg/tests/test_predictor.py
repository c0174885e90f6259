import numpy as np
import pytest
import torch

from dsniqa.backbone import MultiScaleFeatures, extract
from dsniqa.errors import DimMismatch
from dsniqa.imaging import ImageDataset, ImageSample, load_manifest
from dsniqa.predictor import (
    PredictorHead,
    build_bundle,
    forward,
    fuse,
    predict,
)
from dsniqa.spmapnet import AdjacencyMap, generate_adjacency
from dsniqa.superpixel import segment
from dsniqa.training import TrainConfig, fit, l1_loss

from .conftest import small_model_config


def _feats(rng, dims=((3, 4, 5), 6)):
    return MultiScaleFeatures([rng.standard_normal(d) for d in dims[0]], rng.standard_normal(dims[1]))


def test_fuse_identity_and_annihilator(rng):
    f = _feats(rng)
    ones = AdjacencyMap([np.ones(d) for d in (3, 4, 5)], np.ones(6))
    zeros = AdjacencyMap([np.zeros(d) for d in (3, 4, 5)], np.zeros(6))
    assert np.array_equal(fuse(f, ones), np.concatenate([*f.locals, f.holistic]))
    out = fuse(f, zeros)
    assert out.shape == (18,) and not out.any()


def test_fuse_by_hand():
    f = MultiScaleFeatures([np.array([1.0, 2.0])], np.zeros(0))
    a = AdjacencyMap([np.array([3.0, 0.5])], np.zeros(0))
    assert fuse(f, a).tolist() == [3.0, 1.0]


def test_fuse_dim_mismatch(rng):
    f = _feats(rng)
    with pytest.raises(DimMismatch):
        fuse(f, AdjacencyMap([np.ones(3), np.ones(4), np.ones(4)], np.ones(6)))


def test_predict_zero_and_batch(rng):
    head = PredictorHead(10, 8).double()
    with torch.no_grad():
        head.fc1.bias.zero_()
        head.fc2.bias.zero_()
    assert predict(np.zeros(10), head) == 0.0
    batch = rng.standard_normal((5, 10))
    rows = predict(batch, head)
    assert rows.shape == (5,)
    # blocked matmul kernels may round differently from single-row calls
    assert np.allclose(rows, [predict(b, head) for b in batch], rtol=0, atol=1e-12)
    assert predict(batch[0], head) == predict(batch[0], head)
    with pytest.raises(DimMismatch):
        predict(np.zeros(9), head)


@pytest.mark.parametrize("backend", ["slic", "cnn"])
def test_forward_is_composition(make_image, backend):
    bundle = build_bundle(small_model_config(backend), seed=3)
    img = make_image(40, 52)
    cfg = bundle.config
    feats = extract(img, cfg.backbone, bundle.backbone_params)
    spmap = segment(img, cfg.segmenter, bundle.segmenter_params)
    adj = generate_adjacency(spmap, bundle.spmapnet_params,
                             (cfg.backbone.local_dims, cfg.backbone.holistic_dim))
    composed = predict(fuse(feats, adj), bundle.predictor_params)
    assert abs(forward(img, bundle) - composed) < 1e-6


@pytest.mark.parametrize("variant", ["baseline-fixed", "baseline-arbitrary", "multi-only", "full"])
def test_any_size_one_scalar(make_image, variant):
    bundle = build_bundle(small_model_config(variant=variant, fixed_size=(32, 32)))
    outs = [forward(make_image(h, w), bundle) for h, w in [(32, 32), (48, 64), (97, 33)]]
    assert all(type(o) is float and np.isfinite(o) for o in outs)


def test_forward_deterministic(make_image):
    img = make_image(40, 40)
    a = forward(img, build_bundle(small_model_config(), seed=5))
    b = forward(img, build_bundle(small_model_config(), seed=5))
    assert a == b


def test_end_to_end_gradient(rng):
    net = build_bundle(small_model_config("cnn"), seed=1).net
    x = torch.as_tensor(rng.random((2, 3, 40, 40)), dtype=torch.float32)
    l1_loss(net(x), torch.tensor([1.0, -1.0])).backward()
    groups = {"backbone heads": [*net.backbone.local_heads, net.backbone.holistic_head],
              "spmapnet": [net.spmapnet], "predictor": [net.predictor],
              "segmenter": [net.segmenter]}
    for name, mods in groups.items():
        grads = [p.grad for m in mods for p in m.parameters()]
        assert any(g is not None and g.abs().sum() > 0 for g in grads), name


def test_overfit_single_image(tmp_path, rng):
    from PIL import Image

    Image.fromarray((rng.random((40, 40, 3)) * 255).astype(np.uint8)).save(tmp_path / "a.png")
    (tmp_path / "m.csv").write_text("image_path,score\na.png,3.7\n")
    manifest = load_manifest(tmp_path / "m.csv", score_scale=(0.0, 10.0))
    bundle = build_bundle(small_model_config("slic"), seed=0)
    fit(bundle, ImageDataset(manifest), TrainConfig(epochs=60, batch_size=1, lr_schedule="none",
                                                    weight_decay=0.0, learning_rate=1e-3))
    assert abs(forward(ImageSample(np.asarray(Image.open(tmp_path / "a.png")) / 255.0, 0.0),
                       bundle) - 3.7) < 0.05
