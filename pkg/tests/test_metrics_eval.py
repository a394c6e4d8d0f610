import numpy as np
import pytest

from utils.errors import DataError
from utils.file_formats import write_pfm
from utils.metrics_eval import (PRESETS, compute_metrics, evaluate_dirs, evaluate_pair,
                                evaluation_mask, get_preset, mean_reports, median_scale)


def naive_metrics(pred, gt):
    """Pixel-by-pixel reference for the seven metrics."""
    n = len(gt)
    abs_rel = sq_rel = sq = sq_log = 0.0
    hits = [0, 0, 0]
    for p, g in zip(pred, gt):
        abs_rel += abs(p - g) / g
        sq_rel += (p - g) ** 2 / g
        sq += (p - g) ** 2
        sq_log += (np.log(p) - np.log(g)) ** 2
        ratio = max(p / g, g / p)
        for k in range(3):
            hits[k] += ratio < 1.25 ** (k + 1)
    return (abs_rel / n, sq_rel / n, np.sqrt(sq / n), np.sqrt(sq_log / n), hits[0] / n, hits[1] / n, hits[2] / n)


def test_perfect_prediction(rng):
    gt = rng.uniform(1, 50, size=(6, 8))
    report = compute_metrics(gt.copy(), gt)
    assert report.as_tuple() == (0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0)
    assert report.n_valid_pixels == 48


def test_metrics_match_pixel_loop(rng):
    gt = rng.uniform(1, 40, size=200)
    pred = gt * rng.uniform(0.5, 1.8, size=200)
    report = compute_metrics(pred, gt)
    np.testing.assert_allclose(report.as_tuple(), naive_metrics(pred, gt), rtol=1e-12)


def test_predictions_are_capped(rng):
    gt = np.full(10, 50.0)
    report = compute_metrics(np.full(10, 500.0), gt, depth_cap=80.0)
    assert report.abs_rel == pytest.approx(30.0 / 50.0)


def test_median_scaling_removes_global_scale(rng):
    gt = rng.uniform(1, 50, size=(10, 10))
    valid = np.ones_like(gt, dtype=bool)
    scaled, ratio = median_scale(gt * 0.01, gt, valid)
    assert ratio == pytest.approx(100.0)
    np.testing.assert_allclose(scaled, gt)
    report = evaluate_pair(gt * 0.01, gt)
    assert report.abs_rel == pytest.approx(0.0, abs=1e-12)
    assert report.delta1 == 1.0


def test_without_median_scaling_scale_errors_show(rng):
    gt = rng.uniform(1, 50, size=(10, 10))
    report = evaluate_pair(gt * 0.5, gt, median_scaling=False)
    assert report.abs_rel == pytest.approx(0.5)
    assert report.delta1 == 0.0


def test_median_scaling_needs_valid_pixels():
    with pytest.raises(DataError):
        median_scale(np.ones(3), np.ones(3), np.zeros(3, dtype=bool))


def test_mask_drops_missing_and_far_ground_truth():
    gt = np.array([[0.0, 5.0], [79.0, 85.0]])
    np.testing.assert_array_equal(evaluation_mask(gt, PRESETS["kitti"]), [[False, True], [True, False]])


def test_garg_crop_keeps_lower_centre():
    gt = np.full((100, 200), 10.0)
    mask = evaluation_mask(gt, PRESETS["kitti"], garg_crop=True)
    assert not mask[:40].any()
    assert mask[60, 100]
    assert not mask[60, :7].any()


def test_make3d_uses_centre_band():
    gt = np.full((100, 100), 10.0)
    mask = evaluation_mask(gt, get_preset("make3d"))
    assert mask.sum() == 50 * 100
    assert mask[50].all() and not mask[0].any()
    with pytest.raises(ValueError):
        get_preset("nyu")


def test_mean_reports_sums_pixels(rng):
    gt = rng.uniform(1, 30, size=(4, 4))
    reports = [compute_metrics(gt, gt), compute_metrics(gt * 2, gt)]
    mean = mean_reports(reports)
    assert mean.abs_rel == pytest.approx(0.5)
    assert mean.n_valid_pixels == 32


def test_prediction_is_resized_to_ground_truth(rng):
    gt = np.full((8, 8), 10.0)
    report = evaluate_pair(np.full((4, 4), 3.0), gt)
    assert report.abs_rel == pytest.approx(0.0, abs=1e-12)


def test_evaluate_dirs_pairs_by_sorted_name(tmp_path, rng):
    pred_dir, gt_dir = tmp_path / "pred", tmp_path / "gt"
    pred_dir.mkdir()
    gt_dir.mkdir()
    for k in range(3):
        depth = rng.uniform(1, 50, size=(6, 6)).astype(np.float32)
        write_pfm(str(gt_dir / f"{k:03d}.pfm"), depth)
        np.save(str(pred_dir / f"{k:03d}.npy"), depth * 0.2)
    reports, names = evaluate_dirs(str(pred_dir), str(gt_dir))
    assert names == ["000", "001", "002"]
    assert all(r.abs_rel < 1e-6 for r in reports)


def test_evaluate_dirs_counts_must_match(tmp_path):
    (tmp_path / "pred").mkdir()
    (tmp_path / "gt").mkdir()
    np.save(str(tmp_path / "pred" / "a.npy"), np.ones((2, 2)))
    with pytest.raises(DataError):
        evaluate_dirs(str(tmp_path / "pred"), str(tmp_path / "gt"))
