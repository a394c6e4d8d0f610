"""
Self-supervised training objective: SSIM + L1 photometric error, the
edge-aware disparity smoothness term, the static-pixel auto-mask and the
multi-scale total loss.
"""

import logging
from dataclasses import dataclass

import numpy as np

from utils import tensor_core as tc
from utils.config import LossConfig
from utils.errors import ShapeError
from utils.mambadepth_net import disp_to_depth
from utils.view_synthesis import reconstruct

logger = logging.getLogger(__name__)

# photometric error assigned to pixels a source cannot see
INVALID_ERROR = 1e3
DISP_MEAN_EPS = 1e-7


@dataclass
class LossTerms:
    total: tc.Tensor
    photometric: float
    smoothness: float
    mask_coverage: float


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)


def _box_mean(x, window):
    half = window // 2
    padded = tc.pad(x, ((half, half), (half, half), (0, 0)), mode="reflect")
    return tc.avg_pool2d(padded, window, stride=1)


def ssim(a, b, cfg=None):
    """
    Windowed structural similarity per pixel and channel.

    Parameters:
    a (Tensor): Image [H, W, C]
    b (Tensor): Image [H, W, C]
    cfg (LossConfig): Window size and stabilising constants

    Returns:
    Tensor: SSIM map [H, W, C]
    """
    cfg = cfg or LossConfig()
    a, b = tc.as_tensor(a), tc.as_tensor(b)
    _same_shape("ssim", a, b)
    if a.ndim != 3:
        raise ShapeError("ssim", a.shape, detail="expected [H, W, C]")
    window = cfg.ssim_window

    mu_a = _box_mean(a, window)
    mu_b = _box_mean(b, window)
    sigma_a = tc.sub(_box_mean(tc.mul(a, a), window), tc.mul(mu_a, mu_a))
    sigma_b = tc.sub(_box_mean(tc.mul(b, b), window), tc.mul(mu_b, mu_b))
    sigma_ab = tc.sub(_box_mean(tc.mul(a, b), window), tc.mul(mu_a, mu_b))

    numerator = tc.mul(tc.add(tc.mul(tc.mul(mu_a, mu_b), 2.0), cfg.ssim_c1),
                       tc.add(tc.mul(sigma_ab, 2.0), cfg.ssim_c2))
    denominator = tc.mul(tc.add(tc.add(tc.mul(mu_a, mu_a), tc.mul(mu_b, mu_b)), cfg.ssim_c1),
                         tc.add(tc.add(sigma_a, sigma_b), cfg.ssim_c2))
    return tc.div(numerator, denominator)


def photometric_error(image_a, image_b, cfg=None):
    """
    pe = alpha/2 * (1 - SSIM) + (1 - alpha) * |a - b|, both channel-averaged.

    Returns:
    Tensor: Per-pixel error [H, W]
    """
    cfg = cfg or LossConfig()
    image_a, image_b = tc.as_tensor(image_a), tc.as_tensor(image_b)
    _same_shape("photometric_error", image_a, image_b)
    l1 = tc.mean(tc.abs_(tc.sub(image_a, image_b)), axis=-1)
    if cfg.alpha == 0:
        return l1
    structure = tc.mean(tc.sub(1.0, ssim(image_a, image_b, cfg)), axis=-1)
    return tc.add(tc.mul(structure, cfg.alpha / 2.0), tc.mul(l1, 1.0 - cfg.alpha))


def _diff_x(x):
    return tc.sub(tc.slice_(x, (slice(None), slice(None, -1))), tc.slice_(x, (slice(None), slice(1, None))))


def _diff_y(x):
    return tc.sub(tc.slice_(x, (slice(None, -1), slice(None))), tc.slice_(x, (slice(1, None), slice(None))))


def smoothness_loss(disp, image):
    """
    Edge-aware smoothness of a mean-normalised disparity map.

    Parameters:
    disp (Tensor): Disparity [H, W]
    image (Tensor): Image [H, W, C] at the same resolution

    Returns:
    Tensor: Scalar loss
    """
    disp, image = tc.as_tensor(disp), tc.as_tensor(image)
    if disp.ndim != 2 or image.shape[:2] != disp.shape:
        raise ShapeError("smoothness_loss", disp.shape, image.shape)
    normalised = tc.div(disp, tc.add(tc.mean(disp), DISP_MEAN_EPS))

    terms = []
    for axis, diff in ((1, _diff_x), (0, _diff_y)):
        if disp.shape[axis] < 2:
            continue
        disp_grad = tc.abs_(diff(normalised))
        image_grad = tc.mean(tc.abs_(diff(image)), axis=-1)
        terms.append(tc.mean(tc.mul(disp_grad, tc.exp(tc.neg(image_grad)))))
    if not terms:
        return tc.mul(tc.sum_(disp), 0.0)
    total = terms[0]
    for term in terms[1:]:
        total = tc.add(total, term)
    return total


def _min_error(errors):
    best = errors[0]
    for error in errors[1:]:
        best = tc.minimum(best, error)
    return best


def auto_mask(target, warped_sources, raw_sources, cfg=None, valid_masks=None):
    """
    1 where the best warped reconstruction beats the best unwarped source.

    Parameters:
    target (Tensor): Target image [H, W, C]
    warped_sources (list): Reconstructions of the target from each source
    raw_sources (list): The source images themselves
    cfg (LossConfig): Photometric weighting
    valid_masks (list): Optional per-source validity; invalid pixels count
        as unreconstructable

    Returns:
    ndarray: Float mask of 0/1 values [H, W]
    """
    with tc.no_grad():
        warped_errors = [photometric_error(target, w, cfg).data for w in warped_sources]
        raw_errors = [photometric_error(target, r, cfg).data for r in raw_sources]
    if valid_masks is not None:
        warped_errors = [np.where(m, e, INVALID_ERROR) for e, m in zip(warped_errors, valid_masks)]
    best_warped = np.minimum.reduce(warped_errors)
    best_raw = np.minimum.reduce(raw_errors)
    return (best_warped < best_raw).astype(best_warped.dtype)


def photometric_term(target, sources, depth, poses, cam, cfg=None):
    """
    Masked minimum-reprojection photometric loss at one scale.

    Parameters:
    target (Tensor): Target frame [H, W, 3]
    sources (list): Source frames, each [H, W, 3]
    depth (Tensor): Target depth [H, W]
    poses (list): 4x4 target-to-source transforms, one per source
    cam (CameraModel): Intrinsics
    cfg (LossConfig): Loss settings

    Returns:
    tuple: (scalar Tensor, ndarray auto-mask [H, W], ndarray valid [H, W])
    """
    cfg = cfg or LossConfig()
    if len(sources) != len(poses):
        raise ValueError(f"Got {len(sources)} sources but {len(poses)} poses")
    errors = []
    valid = None
    warped_values = []
    valid_masks = []
    for source, pose in zip(sources, poses):
        warped, in_view = reconstruct(source, depth, pose, cam)
        error = photometric_error(target, warped, cfg)
        keep = in_view.astype(error.dtype)
        errors.append(tc.add(tc.mul(error, keep), (1.0 - keep) * INVALID_ERROR))
        warped_values.append(warped.data)
        valid_masks.append(in_view)
        valid = in_view if valid is None else valid | in_view
    best = _min_error(errors)

    mask = auto_mask(target, warped_values, sources, cfg, valid_masks=valid_masks)
    weight = mask * valid
    return tc.mean(tc.mul(best, weight)), mask, valid


def area_downsample(image, height, width):
    image = tc.as_tensor(image)
    factor = image.shape[0] // height
    if factor <= 1:
        return image
    if image.shape[0] != factor * height or image.shape[1] != factor * width:
        raise ShapeError("area_downsample", image.shape, (height, width))
    return tc.avg_pool2d(image, factor)


def total_loss(target, sources, outputs, poses, cam, cfg=None, min_depth=0.1, max_depth=100.0):
    """
    Multi-scale objective: masked photometric loss on full-resolution
    reconstructions plus smoothness weighted by lambda / 2**scale,
    averaged over scales.

    Parameters:
    target (Tensor): Target frame [H, W, 3] (un-augmented colours)
    sources (list): Frames t-1 and t+1
    outputs (DepthOutputs): Network predictions for the target
    poses (list): 4x4 target-to-source transforms
    cam (CameraModel): Intrinsics at full resolution
    cfg (LossConfig): Loss settings
    min_depth (float): Depth for disparity 1
    max_depth (float): Depth for disparity 0

    Returns:
    LossTerms: Total (differentiable) and its parts
    """
    cfg = cfg or LossConfig()
    target = tc.as_tensor(target)
    height, width = target.shape[:2]
    scales = len(outputs.disparities)

    total = None
    photo_sum = 0.0
    smooth_sum = 0.0
    coverage_sum = 0.0
    for scale in range(scales):
        disp = outputs.upsampled_disparities[scale]
        depth = disp_to_depth(disp, min_depth, max_depth)
        photo, mask, _ = photometric_term(target, sources, depth, poses, cam, cfg)

        native = outputs.disparities[scale]
        image = area_downsample(target, *native.shape)
        smooth = smoothness_loss(native, image)
        scale_loss = tc.add(photo, tc.mul(smooth, cfg.smoothness_weight / (2 ** scale)))

        total = scale_loss if total is None else tc.add(total, scale_loss)
        photo_sum += photo.item()
        smooth_sum += smooth.item()
        coverage_sum += float(mask.mean())

    total = tc.div(total, float(scales))
    logger.debug("loss %.6f over %d scales (%dx%d)", total.item(), scales, height, width)
    return LossTerms(
        total=total,
        photometric=photo_sum / scales,
        smoothness=smooth_sum / scales,
        mask_coverage=coverage_sum / scales,
    )
