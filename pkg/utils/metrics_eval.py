"""Standard monocular depth error metrics with per-image median scaling."""

import glob
import logging
import os
from dataclasses import dataclass, fields

import cv2
import numpy as np

from utils.errors import DataError
from utils.file_formats import read_pfm

logger = logging.getLogger(__name__)

# fractional crop window (top, bottom, left, right) used by the KITTI Eigen split
GARG_CROP = (0.40810811, 0.99189189, 0.03594771, 0.96405229)


@dataclass
class EvalReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float
    n_valid_pixels: int

    def as_tuple(self):
        return (self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3)


@dataclass(frozen=True)
class EvalPreset:
    name: str
    min_depth: float
    max_depth: float
    centre_crop_aspect: float = None
    reported: tuple = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")


PRESETS = {
    "kitti": EvalPreset("kitti", min_depth=1e-3, max_depth=80.0),
    "make3d": EvalPreset("make3d", min_depth=1e-3, max_depth=70.0, centre_crop_aspect=2.0,
                         reported=("abs_rel", "sq_rel", "rmse", "rmse_log")),
}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"Unknown evaluation preset '{name}' (choose from {', '.join(PRESETS)})") from None


def median_scale(pred, gt, valid):
    """
    Scale ``pred`` so its median over ``valid`` matches the ground truth's.

    Returns:
    tuple: (scaled prediction, ratio)
    """
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise DataError("median scaling needs at least one valid pixel")
    ratio = np.median(gt[valid]) / np.median(pred[valid])
    return pred * ratio, float(ratio)


def compute_metrics(pred, gt, valid=None, depth_cap=80.0, min_depth=1e-3):
    """
    Eigen error metrics over the valid pixels.

    Parameters:
    pred (ndarray): Predicted depth (already median-scaled if wanted)
    gt (ndarray): Ground-truth depth
    valid (ndarray): Boolean mask (all pixels when None)
    depth_cap (float): Predictions are clamped to [min_depth, depth_cap]
    min_depth (float): Lower clamp

    Returns:
    EvalReport: The seven metrics plus the valid pixel count
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DataError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    valid = np.ones(gt.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not valid.any():
        raise DataError("no valid pixels to evaluate")

    p = np.clip(pred[valid], min_depth, depth_cap)
    g = gt[valid]
    diff = p - g
    ratio = np.maximum(p / g, g / p)
    return EvalReport(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        n_valid_pixels=int(valid.sum()),
    )


def evaluation_mask(gt, preset, garg_crop=False):
    """Pixels with ground truth inside the preset range (and crop window)."""
    gt = np.asarray(gt)
    height, width = gt.shape
    mask = (gt > preset.min_depth) & (gt < preset.max_depth)
    if garg_crop:
        top, bottom, left, right = GARG_CROP
        crop = np.zeros_like(mask)
        crop[int(top * height):int(bottom * height), int(left * width):int(right * width)] = True
        mask &= crop
    if preset.centre_crop_aspect:
        crop_height = min(height, int(round(width / preset.centre_crop_aspect)))
        start = (height - crop_height) // 2
        crop = np.zeros_like(mask)
        crop[start:start + crop_height, :] = True
        mask &= crop
    return mask


def evaluate_pair(pred, gt, preset="kitti", garg_crop=False, median_scaling=True):
    """
    Evaluate one predicted depth map against ground truth.

    Parameters:
    pred (ndarray): Predicted depth; resized to the ground-truth size if needed
    gt (ndarray): Ground-truth depth (0 or out-of-range where unknown)
    preset (str or EvalPreset): Depth range and crop convention
    garg_crop (bool): Apply the KITTI crop window
    median_scaling (bool): Resolve scale with the per-image median ratio

    Returns:
    EvalReport: Metrics for this image
    """
    preset = get_preset(preset) if isinstance(preset, str) else preset
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        pred = cv2.resize(pred, (gt.shape[1], gt.shape[0]), interpolation=cv2.INTER_LINEAR)
    mask = evaluation_mask(gt, preset, garg_crop)
    if median_scaling:
        pred, _ = median_scale(pred, gt, mask)
    return compute_metrics(pred, gt, mask, depth_cap=preset.max_depth, min_depth=preset.min_depth)


def mean_reports(reports):
    """Average per-image reports; pixel counts are summed."""
    if not reports:
        raise DataError("no reports to average")
    names = [f.name for f in fields(EvalReport) if f.name != "n_valid_pixels"]
    values = {name: float(np.mean([getattr(r, name) for r in reports])) for name in names}
    return EvalReport(**values, n_valid_pixels=int(sum(r.n_valid_pixels for r in reports)))


def _depth_files(directory):
    return sorted(glob.glob(os.path.join(directory, "*.pfm")) + glob.glob(os.path.join(directory, "*.npy")))


def _read_depth(path):
    if path.endswith(".npy"):
        return np.load(path).astype(np.float64)
    return read_pfm(path).astype(np.float64)


def evaluate_dirs(pred_dir, gt_dir, preset="kitti", garg_crop=False, median_scaling=True):
    """
    Pair files by sorted order and evaluate each image.

    Returns:
    tuple: (list of EvalReport, list of file stems)
    """
    preds = _depth_files(pred_dir)
    gts = _depth_files(gt_dir)
    if len(preds) != len(gts):
        raise DataError(f"{len(preds)} predictions in '{pred_dir}' but {len(gts)} ground-truth maps in '{gt_dir}'")
    if not preds:
        raise DataError(f"no depth maps (*.pfm, *.npy) found in '{pred_dir}'")
    reports = []
    for pred_path, gt_path in zip(preds, gts):
        reports.append(evaluate_pair(_read_depth(pred_path), _read_depth(gt_path), preset,
                                     garg_crop=garg_crop, median_scaling=median_scaling))
    names = [os.path.splitext(os.path.basename(p))[0] for p in preds]
    logger.info("Evaluated %d images (%s preset)", len(reports), preset if isinstance(preset, str) else preset.name)
    return reports, names
