import json

import numpy as np
import pytest
from PIL import Image

from dsniqa.cli import main
from dsniqa.config import build, parse_text
from dsniqa.errors import BadConfig

SMALL_CFG = """\
# desk-scale model
seed = 3
backbone.local_dims = 24,24,24
backbone.holistic_dim = 48
backbone.adaptive_pool_size = 4,4
backbone.head_channels = 16
segmenter.n_superpixels = 16
model.spmap_channels = 16,16,16
model.spmap_pool_size = 4x4
model.spmap_hidden = 48
model.head_hidden = 32
train.epochs = 1
train.batch_size = 4
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text(SMALL_CFG)
    return p


@pytest.fixture
def png(tmp_path):
    r = np.random.default_rng(0)
    path = tmp_path / "a.png"
    Image.fromarray((r.random((60, 80, 3)) * 255).astype(np.uint8)).save(path)
    return path


@pytest.mark.parametrize("backend", ["slic", "cnn"])
def test_segment_label_png(tmp_path, png, backend, capsys):
    out = tmp_path / "labels.png"
    probs = tmp_path / "p.spxl"
    code = main(["segment", "--image", str(png), "--backend", backend, "--n", "100",
                 "--labels", str(out), "--probs", str(probs), "--out", str(tmp_path / "run")])
    assert code == 0
    colours = np.unique(np.asarray(Image.open(out)).reshape(-1, 3), axis=0)
    assert 1 <= len(colours) <= 100
    assert probs.read_bytes()[:5] == b"SPXL1"
    assert (tmp_path / "run" / "run_header.json").exists()
    assert "segments=" in capsys.readouterr().out


def test_metrics_identical(tmp_path, capsys):
    p = tmp_path / "p.csv"
    p.write_text("score\n1.5\n2.0\n0.3\n9\n")
    assert main(["metrics", "--pred", str(p), "--gt", str(p)]) == 0
    assert capsys.readouterr().out.strip() == "srcc=1 plcc=1 n=4"


def test_exit_codes(tmp_path, png, capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1
    assert main(["metrics", "--pred", str(tmp_path / "missing.csv"), "--gt", "x"]) == 2
    assert main(["segment", "--image", str(png), "--bogus-flag", "1"]) == 1
    bad = tmp_path / "bad.cfg"
    bad.write_text("train.epochz = 3\n")
    assert main(["segment", "--image", str(png), "--config", str(bad)]) == 1
    assert "train.epochz" in capsys.readouterr().err
    bad.write_text("train.epochs = many\n")
    assert main(["segment", "--image", str(png), "--config", str(bad)]) == 1
    assert "train.epochs" in capsys.readouterr().err


def test_config_precedence():
    file_values = parse_text("seed = 4\ntrain.epochs = 7\n")
    cfg = build(file_values, {"train.epochs": "9"}, env={"DSNIQA_SEED": "11"})
    assert (cfg.seed, cfg.train.epochs) == (4, 9)
    assert cfg.sources == {"seed": "file", "train.epochs": "flag"}
    assert build({}, {}, env={"DSNIQA_SEED": "11"}).seed == 11
    assert build({}, {}, env={}).seed == 0
    assert build({}, {"seed": 2}, env={"DSNIQA_SEED": "11"}).seed == 2
    with pytest.raises(BadConfig):
        parse_text("no equals sign here")
    with pytest.raises(BadConfig):
        build({"model.variant": "enormous"}, {}, env={})


def test_train_eval_header_reproducible(tmp_path, toy_dir, cfg_file, capsys):
    manifest = str(toy_dir / "manifest.csv")
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train", "--config", str(cfg_file), "--manifest", manifest,
                     "--out", str(out), "--split", "by-reference-content"]) == 0
        runs.append(out)
    heads = [json.loads((r / "run_header.json").read_text()) for r in runs]
    assert heads[0] == heads[1]
    assert {"config_digest", "seed", "version"} <= set(heads[0]) and heads[0]["seed"] == 3
    assert (runs[0] / "model.ckpt").read_bytes() == (runs[1] / "model.ckpt").read_bytes()
    assert (runs[0] / "train_log.csv").read_text().startswith("epoch,mean_loss,lr")

    ev = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(runs[0] / "model.ckpt"), "--manifest", manifest,
                 "--out", str(ev)]) == 0
    rows = (ev / "scores.csv").read_text().splitlines()
    assert rows[0] == "image_path,score,prediction" and len(rows) == 31
    report = json.loads((ev / "eval_report.json").read_text())
    assert report["n"] == 30 and report["plcc_mapping"] == "none"
    assert (ev / "run_header.json").exists()


def test_experiment_ablation_row(tmp_path, toy_dir, cfg_file, capsys):
    out = tmp_path / "exp"
    code = main(["experiment", "--config", str(cfg_file), "--kind", "ablation", "--variant", "full",
                 "--train-manifest", str(toy_dir / "manifest.csv"), "--repeats", "1",
                 "--out", str(out)])
    assert code == 0
    text = (out / "report.txt").read_text()
    row = [l for l in text.splitlines() if l.startswith("median [full]")]
    assert row and "params=" in row[0]
    assert "[full] repeat=0" in capsys.readouterr().out


def test_seed_env_override(tmp_path, png, monkeypatch):
    monkeypatch.setenv("DSNIQA_SEED", "17")
    out = tmp_path / "run"
    assert main(["segment", "--image", str(png), "--out", str(out)]) == 0
    assert json.loads((out / "run_header.json").read_text())["seed"] == 17
