import zipfile

import numpy as np
import pytest
import torch

from dsniqa.errors import CorruptCheckpoint, EmptyBatch, LengthMismatch, MixedSizeBatch, VersionMismatch
from dsniqa.imaging import ImageDataset, ImageSample
from dsniqa.predictor import build_bundle, forward
from dsniqa.training import (
    TrainConfig,
    collate,
    fit,
    l1_loss,
    load_checkpoint,
    regularized_loss,
    save_checkpoint,
    train,
)

from .conftest import small_model_config
from .gradcheck import fd_check, rel_err


def test_l1_cases(rng):
    assert l1_loss([1, 2, 3], [1, 2, 3]) == 0.0
    assert l1_loss([1, 2], [3, 0]) == 2.0
    a, b = rng.standard_normal(100), rng.standard_normal(100)
    oracle = sum(abs(x - y) for x, y in zip(a.tolist(), b.tolist())) / 100
    assert abs(l1_loss(a, b) - oracle) < 1e-12
    t = l1_loss(torch.as_tensor(a), torch.as_tensor(b))
    assert abs(t.item() - oracle) < 1e-12
    with pytest.raises(LengthMismatch):
        l1_loss([1, 2], [1])
    with pytest.raises(EmptyBatch):
        l1_loss([], [])


def test_regularized_cases():
    w = torch.nn.Parameter(torch.tensor([2.0], dtype=torch.float64))
    assert regularized_loss(1.0, [w], 0.5) == 3.0
    base = torch.tensor(0.7, dtype=torch.float64)
    assert regularized_loss(base, [w], 0.0) is base


def test_regularized_matches_flat_dump():
    bundle = build_bundle(small_model_config("cnn"), seed=2, dtype=torch.float64)
    dump = np.concatenate([p.detach().numpy().ravel() for p in bundle.net.parameters()])
    oracle = 0.25 + 1e-3 * float(np.sum(dump ** 2))
    assert abs(regularized_loss(0.25, bundle, 1e-3) - oracle) < 1e-10


def test_collate_mixed_sizes(make_image):
    with pytest.raises(MixedSizeBatch):
        collate([make_image(224, 224), make_image(256, 256)])
    x, y = collate([make_image(40, 40, 1.0), make_image(40, 40, 2.0)])
    assert x.shape == (2, 3, 40, 40) and y.tolist() == [1.0, 2.0]


def test_fit_mixed_sizes_without_crop(tmp_path, rng):
    from PIL import Image

    from dsniqa.imaging import load_manifest

    for name, hw in [("a.png", (40, 40)), ("b.png", (48, 40))]:
        Image.fromarray((rng.random(hw + (3,)) * 255).astype(np.uint8)).save(tmp_path / name)
    (tmp_path / "m.csv").write_text("image_path,score\na.png,1\nb.png,2\n")
    m = load_manifest(tmp_path / "m.csv")
    bundle = build_bundle(small_model_config("slic"))
    with pytest.raises(MixedSizeBatch):
        fit(bundle, ImageDataset(m), TrainConfig(epochs=1, batch_size=2))
    # crop_size or size bucketing makes the same set trainable
    fit(bundle, ImageDataset(m), TrainConfig(epochs=1, batch_size=2, crop_size=(32, 32)))
    fit(bundle, ImageDataset(m), TrainConfig(epochs=1, batch_size=2, bucket_by_size=True))


def test_decay_changes_trajectory(toy_manifest):
    sub = toy_manifest.subset(range(6), "six")
    base = dict(epochs=1, batch_size=3, seed=4)
    b0, log0 = train(sub, None, TrainConfig(weight_decay=0.0, **base), small_model_config("slic"))
    b1, log1 = train(sub, None, TrainConfig(weight_decay=5e-2, **base), small_model_config("slic"))
    diffs = [not torch.equal(p, q) for p, q in zip(b0.net.parameters(), b1.net.parameters())]
    assert all(diffs)


def test_training_is_deterministic(toy_manifest):
    sub = toy_manifest.subset(range(6), "six")
    cfg = TrainConfig(epochs=2, batch_size=3, seed=9, crop_size=(32, 32))
    _, a = train(sub, None, cfg, small_model_config("cnn"))
    _, b = train(sub, None, cfg, small_model_config("cnn"))
    assert a.rows == b.rows


def test_log_csv(tmp_path, toy_manifest):
    _, log = train(toy_manifest.subset(range(4), "four"), None, TrainConfig(epochs=2, batch_size=2),
                   small_model_config("slic"))
    log.write_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss,lr" and len(lines) == 3


def _probe():
    r = np.random.default_rng(0)
    return [ImageSample(r.random((h, w, 3)), 0.0) for h, w in [(40, 40), (37, 61)]]


@pytest.mark.parametrize("backend", ["slic", "cnn"])
def test_checkpoint_round_trip(tmp_path, backend):
    bundle = build_bundle(small_model_config(backend), seed=11)
    with torch.no_grad():
        bundle.net.predictor.offset.fill_(42.0)
    path = tmp_path / "m.ckpt"
    save_checkpoint(bundle, path)
    back = load_checkpoint(path)
    assert back.config == bundle.config
    for img in _probe():
        assert abs(forward(img, back) - forward(img, bundle)) < 1e-6


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(build_bundle(small_model_config("slic")), path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_checkpoint_flipped_byte(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(build_bundle(small_model_config("slic")), path)
    src = zipfile.ZipFile(path)
    tampered = tmp_path / "t.ckpt"
    with zipfile.ZipFile(tampered, "w") as zf:
        for info in src.infolist():
            data = src.read(info)
            if info.filename.startswith("params/") and "predictor.fc2.weight" in info.filename:
                data = bytes([data[0] ^ 0xFF]) + data[1:]
            zf.writestr(info, data)
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tampered)


def test_checkpoint_version_gate(tmp_path):
    from dsniqa.predictor import FORMAT_VERSION

    path = tmp_path / "m.ckpt"
    save_checkpoint(build_bundle(small_model_config("slic")), path, FORMAT_VERSION + 1)
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)


def test_regularized_loss_finite_differences(rng):
    bundle = build_bundle(small_model_config("cnn", n=6), seed=5, dtype=torch.float64)
    net = bundle.net
    x = torch.as_tensor(rng.random((2, 3, 36, 36)))
    y = torch.tensor([3.0, -2.0], dtype=torch.float64)
    params = [p for p in net.parameters() if p.requires_grad]

    def loss():
        return regularized_loss(l1_loss(net(x), y), params, 1e-2)

    picks = [net.backbone.local_heads[1].fc.weight, net.backbone.holistic_head.reduce.weight,
             net.spmapnet.convs[0].weight, net.spmapnet.holistic_proj.weight,
             net.predictor.fc1.weight, net.segmenter.convs[0].weight]
    sel = np.random.default_rng(7)
    for p in picks:
        idx = int(sel.integers(p.numel()))
        a, n = fd_check(loss, p, idx)
        assert rel_err(a, n) < 1e-2, (a, n)
