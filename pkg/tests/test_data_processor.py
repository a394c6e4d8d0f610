import numpy as np
import pytest

from utils.data_processor import (LOSS_COLUMNS, METRIC_COLUMNS, FrameTripletRecord, epoch_means,
                                  format_metrics_csv, list_frames, load_dataset_dir,
                                  loss_curve_frame, make_triplets, metrics_row_frame,
                                  read_intrinsics, write_loss_csv)
from utils.errors import DataError
from utils.file_formats import write_image
from utils.metrics_eval import EvalReport
from tests.helpers import tiny_camera


def _report(value):
    return EvalReport(abs_rel=value, sq_rel=value, rmse=value, rmse_log=value,
                      delta1=1.0, delta2=1.0, delta3=1.0, n_valid_pixels=10)


def test_read_intrinsics_skips_comments(tmp_path):
    path = tmp_path / "intrinsics.txt"
    path.write_text("# fx fy cx cy\n100 101.5\n  50 40 # centre\n")
    cam = read_intrinsics(str(path), 100, 80)
    assert (cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height) == (100.0, 101.5, 50.0, 40.0, 100, 80)


def test_read_intrinsics_wants_four_numbers(tmp_path):
    path = tmp_path / "intrinsics.txt"
    path.write_text("100 100 50\n")
    with pytest.raises(DataError, match="expected 4 numbers"):
        read_intrinsics(str(path), 100, 100)


def test_list_frames_is_sorted_and_filtered(tmp_path):
    for name in ("b.png", "a.png", "notes.txt", "c.pfm"):
        (tmp_path / name).write_bytes(b"")
    assert [p.split("/")[-1] for p in list_frames(str(tmp_path))] == ["a.png", "b.png", "c.pfm"]


def test_make_triplets_slides_over_frames():
    frames = [np.full((8, 8, 3), k / 10) for k in range(5)]
    records = make_triplets(frames, tiny_camera())
    assert [r.name for r in records] == ["frame_00001", "frame_00002", "frame_00003"]
    assert records[1].target[0, 0, 0] == pytest.approx(0.2)
    assert [s[0, 0, 0] for s in records[1].sources] == pytest.approx([0.1, 0.3])


def test_triplet_rejects_mismatched_intrinsics():
    frames = tuple(np.zeros((8, 8, 3)) for _ in range(3))
    with pytest.raises(DataError, match="intrinsics"):
        FrameTripletRecord(frames=frames, camera=tiny_camera(16))


def test_triplet_rejects_mixed_shapes():
    frames = (np.zeros((8, 8, 3)), np.zeros((8, 8, 3)), np.zeros((4, 8, 3)))
    with pytest.raises(DataError):
        FrameTripletRecord(frames=frames, camera=tiny_camera())


def test_dataset_dir_of_png_frames(tmp_path, rng):
    (tmp_path / "frames").mkdir()
    for k in range(4):
        write_image(str(tmp_path / "frames" / f"{k:03d}.png"), rng.uniform(size=(8, 8, 3)))
    (tmp_path / "intrinsics.txt").write_text("8 8 3.5 3.5\n")
    records = load_dataset_dir(str(tmp_path))
    assert len(records) == 2
    assert records[0].depth is None
    assert records[0].name == "001"


def test_dataset_dir_needs_three_frames(tmp_path):
    (tmp_path / "frames").mkdir()
    with pytest.raises(DataError, match="at least 3 frames"):
        load_dataset_dir(str(tmp_path))


def test_loss_csv_columns_and_epoch_means(tmp_path):
    rows = [[0, 0, 1.0, 0.9, 0.1, 0.5], [0, 1, 3.0, 2.9, 0.1, 0.7], [1, 2, 0.5, 0.4, 0.1, 0.8]]
    path = tmp_path / "loss_curve.csv"
    write_loss_csv(str(path), rows)
    assert path.read_text().splitlines()[0] == ",".join(LOSS_COLUMNS)
    means = epoch_means(loss_curve_frame(rows))
    assert means["loss_total"].tolist() == [2.0, 0.5]
    assert "step" not in means.columns


def test_metrics_tables():
    frame = metrics_row_frame([_report(0.1), _report(0.2)], names=["a", "b"])
    assert list(frame.columns) == ["image"] + METRIC_COLUMNS + ["n_valid_pixels"]
    text = format_metrics_csv(_report(0.25))
    header, values = text.strip().split("\n")
    assert header == "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3"
    assert values == "0.250000,0.250000,0.250000,0.250000,1.000000,1.000000,1.000000"
