import os

import numpy as np
import pytest

from utils.cli import EXIT_CONFIG, EXIT_DATA, EXIT_DIMENSION, EXIT_OK, main
from utils.config import NetConfig
from utils.file_formats import read_pfm, write_image, write_pfm
from utils.mambadepth_net import init_model, save_model


@pytest.fixture
def tiny_checkpoint(tmp_path):
    config = NetConfig.desk(base_channels=4, state_dim=2, pose_channels=(8, 8))
    path = str(tmp_path / "tiny.ckpt")
    save_model(path, init_model(config, np.random.default_rng(0)), config)
    return path


def test_missing_config_exits_2(tmp_path):
    assert main(["train", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.parametrize("text", ["[train]\nepochs = ten\n", "epochs = 3\n[train]\n"])
def test_bad_config_line_exits_2(tmp_path, text):
    path = tmp_path / "bad.cfg"
    path.write_text(text)
    assert main(["train", "--config", str(path), "--synthetic", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_train_without_data_exits_3(tmp_path):
    assert main(["train", "--out", str(tmp_path)]) == EXIT_DATA


def test_corrupt_checkpoint_exits_3(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    image = str(tmp_path / "frame.png")
    write_image(image, np.zeros((32, 32, 3)))
    assert main(["infer", "--checkpoint", str(bad), "--image", image,
                 "--out", str(tmp_path / "d.pfm")]) == EXIT_DATA


def test_indivisible_image_exits_4(tmp_path, tiny_checkpoint):
    image = str(tmp_path / "frame.png")
    write_image(image, np.zeros((48, 40, 3)))
    assert main(["infer", "--checkpoint", tiny_checkpoint, "--image", image,
                 "--out", str(tmp_path / "d.pfm")]) == EXIT_DIMENSION


def test_infer_writes_disparity_and_preview(tmp_path, tiny_checkpoint, rng):
    image = str(tmp_path / "frame.png")
    write_image(image, rng.uniform(size=(32, 64, 3)))
    out = str(tmp_path / "disp.pfm")
    depth_out = str(tmp_path / "depth.pfm")
    assert main(["infer", "--checkpoint", tiny_checkpoint, "--image", image, "--out", out,
                 "--depth-out", depth_out]) == EXIT_OK
    disp = read_pfm(out)
    assert disp.shape == (32, 64)
    assert np.all((disp > 0) & (disp < 1))
    assert os.path.exists(str(tmp_path / "disp.png"))
    assert read_pfm(depth_out).min() >= 0.1 - 1e-6


def test_eval_of_perfect_predictions(tmp_path, capsys, rng):
    for sub in ("pred", "gt"):
        (tmp_path / sub).mkdir()
    for k in range(2):
        depth = rng.uniform(1, 50, size=(8, 8)).astype(np.float32)
        write_pfm(str(tmp_path / "pred" / f"{k}.pfm"), depth)
        write_pfm(str(tmp_path / "gt" / f"{k}.pfm"), depth)
    per_image = str(tmp_path / "per_image.csv")
    assert main(["eval", "--pred-dir", str(tmp_path / "pred"), "--gt-dir", str(tmp_path / "gt"),
                 "--per-image", per_image]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[-2] == "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3"
    assert lines[-1] == "0.000000,0.000000,0.000000,0.000000,1.000000,1.000000,1.000000"
    assert os.path.exists(per_image)


def test_eval_with_missing_ground_truth_exits_3(tmp_path):
    (tmp_path / "pred").mkdir()
    (tmp_path / "gt").mkdir()
    assert main(["eval", "--pred-dir", str(tmp_path / "pred"), "--gt-dir", str(tmp_path / "gt")]) == EXIT_DATA


def test_make_synthetic_then_summary(tmp_path, capsys):
    out = str(tmp_path / "scene")
    assert main(["make-synthetic", "--out", out, "--frames", "4", "--width", "32", "--height", "32"]) == EXIT_OK
    assert len(os.listdir(os.path.join(out, "frames"))) == 4
    assert main(["summary"]) == EXIT_OK
    assert "total:" in capsys.readouterr().out


def test_scancheck_passes():
    assert main(["scancheck", "--seeds", "2", "--cases", "5"]) == EXIT_OK


@pytest.mark.slow
def test_gradcheck_suites_pass():
    assert main(["gradcheck", "--probes", "20"]) == EXIT_OK


TINY_TRAIN_CONFIG = """\
[model]
base_channels = 4
state_dim = 2
pose_channels = 8, 8

[train]
epochs = 1
batch_size = 1

[data]
synthetic_frames = 4
width = 32
height = 32
"""


def test_strict_mode_training_is_byte_reproducible(tmp_path, monkeypatch):
    monkeypatch.setenv("MDEPTH_THREADS", "1")
    config = tmp_path / "tiny.cfg"
    config.write_text(TINY_TRAIN_CONFIG)
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        assert main(["train", "--config", str(config), "--synthetic", "--seed", "3", "--out", str(out)]) == EXIT_OK
        outputs.append(((out / "loss_curve.csv").read_bytes(), (out / "final.ckpt").read_bytes()))
    assert outputs[0] == outputs[1]
    assert len(outputs[0][0].splitlines()) == 3
