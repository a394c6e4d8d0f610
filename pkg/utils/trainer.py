"""
Joint DepthNet + PoseNet training: Adam with a step learning-rate
schedule, flip and colour augmentation shared across each frame triplet,
and per-epoch checkpoints plus a per-step loss CSV.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import cv2
import numpy as np

from utils import tensor_core as tc
from utils.config import TrainConfig, strict_mode, thread_count
from utils.data_processor import epoch_means, loss_curve_frame, write_loss_csv
from utils.errors import DataError, NonFiniteError
from utils.losses import total_loss
from utils.mambadepth_net import (
    depthnet_forward,
    init_model,
    invert_pose,
    load_model,
    posenet_forward,
    save_model,
)
from utils.run_registry import register_run

logger = logging.getLogger(__name__)

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])
FINAL_CHECKPOINT = "final.ckpt"
LOSS_CSV = "loss_curve.csv"


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def learning_rate(epoch, cfg=None):
    """Step schedule: lr_initial before lr_drop_epoch, lr_after from then on."""
    cfg = cfg or TrainConfig()
    return cfg.lr_initial if epoch < cfg.lr_drop_epoch else cfg.lr_after


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One Adam update with bias correction, applied in place.

    Parameters:
    params (dict): Name to Tensor (or ndarray) to update
    grads (dict): Name to gradient array; all are checked before any update
    state (AdamState): Moments and step counter (mutated)
    lr (float): Learning rate

    Raises:
    NonFiniteError: A gradient holds NaN or inf (nothing is updated)
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'", name=name)

    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for name, param in params.items():
        values = param.data if isinstance(param, tc.Tensor) else param
        grad = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(values)
            state.v[name] = np.zeros_like(values)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * (grad * grad)
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        values -= update.astype(values.dtype, copy=False)


# ---------------------------------------------------------------------------
# augmentation


@dataclass
class AugmentDraw:
    flip: bool = False
    jitter: bool = False
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0


@dataclass
class AugmentedSample:
    inputs: tuple          # network inputs (flipped + colour-jittered)
    loss_frames: tuple     # flipped only, for the photometric loss
    camera: object


def draw_augmentation(rng, cfg=None):
    """Draw one augmentation for a whole triplet (fixed number of draws)."""
    cfg = cfg or TrainConfig()
    flip = rng.random() < cfg.flip_prob
    jitter = rng.random() < cfg.jitter_prob
    brightness = rng.uniform(1 - cfg.brightness, 1 + cfg.brightness)
    contrast = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast)
    saturation = rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)
    hue = rng.uniform(-cfg.hue, cfg.hue)
    return AugmentDraw(flip=bool(flip), jitter=bool(jitter), brightness=brightness,
                       contrast=contrast, saturation=saturation, hue=hue)


def flip_frames(frames):
    return tuple(np.ascontiguousarray(frame[:, ::-1]) for frame in frames)


def shift_hue(image, hue):
    hsv = cv2.cvtColor(image.astype(np.float32), cv2.COLOR_RGB2HSV)
    hsv[..., 0] = np.mod(hsv[..., 0] + hue * 360.0, 360.0)
    return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).astype(image.dtype)


def color_jitter(frames, draw):
    """
    Brightness, contrast, saturation then hue, with the same factors for
    every frame. The contrast pivot is the mean grey level of the middle frame.
    """
    frames = [np.clip(frame * draw.brightness, 0.0, 1.0) for frame in frames]
    pivot = float(np.mean(frames[len(frames) // 2] @ GRAY_WEIGHTS))
    frames = [np.clip((frame - pivot) * draw.contrast + pivot, 0.0, 1.0) for frame in frames]
    jittered = []
    for frame in frames:
        gray = (frame @ GRAY_WEIGHTS)[..., None]
        frame = np.clip((frame - gray) * draw.saturation + gray, 0.0, 1.0)
        if draw.hue != 0.0:
            frame = np.clip(shift_hue(frame, draw.hue), 0.0, 1.0)
        jittered.append(frame)
    return tuple(jittered)


def apply_augmentation(frames, camera, draw):
    frames = tuple(frames)
    if draw.flip:
        frames = flip_frames(frames)
        camera = camera.flipped()
    inputs = color_jitter(frames, draw) if draw.jitter else frames
    return AugmentedSample(inputs=inputs, loss_frames=frames, camera=camera)


def augment(frames, seed, cfg=None):
    """Augmented network inputs for a triplet, reproducible from ``seed``."""
    draw = draw_augmentation(np.random.default_rng(seed), cfg)
    if draw.flip:
        frames = flip_frames(frames)
    return color_jitter(frames, draw) if draw.jitter else tuple(frames)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    curve: object                  # pandas DataFrame of per-step losses
    epoch_losses: object           # per-epoch means
    checkpoint: str
    loss_csv: str
    checkpoints: list = field(default_factory=list)


def sample_loss(model, sample, experiment):
    """Loss of one augmented triplet (target is the middle frame)."""
    dtype = tc.get_default_dtype()
    net = experiment.model
    prev_frame, target, next_frame = (tc.Tensor(f, dtype=dtype) for f in sample.inputs)

    outputs = depthnet_forward(target, model.depth, net)
    pose_prev = invert_pose(posenet_forward(tc.concat([prev_frame, target], axis=-1), model.pose))
    pose_next = posenet_forward(tc.concat([target, next_frame], axis=-1), model.pose)

    loss_prev, loss_target, loss_next = (tc.Tensor(f, dtype=dtype) for f in sample.loss_frames)
    return total_loss(loss_target, [loss_prev, loss_next], outputs,
                      [pose_prev.matrix, pose_next.matrix], sample.camera,
                      experiment.loss, min_depth=net.min_depth, max_depth=net.max_depth)


def train_step(model, samples, experiment, state, lr):
    """Average the loss over ``samples``, backpropagate once and update both networks."""
    tc.reset_tape()
    params = tc.named_parameters(model)
    for param in params.values():
        param.zero_grad()
    terms = [sample_loss(model, sample, experiment) for sample in samples]
    total = terms[0].total
    for term in terms[1:]:
        total = tc.add(total, term.total)
    total = tc.div(total, float(len(terms)))
    tc.backward(total)
    cfg = experiment.train
    adam_step(params, {name: p.grad for name, p in params.items()}, state, lr,
              cfg.beta1, cfg.beta2, cfg.adam_eps)
    count = len(terms)
    return {
        "loss_total": total.item(),
        "loss_photo": sum(t.photometric for t in terms) / count,
        "loss_smooth": sum(t.smoothness for t in terms) / count,
        "mask_coverage": sum(t.mask_coverage for t in terms) / count,
    }


def _prepare(record, seed, epoch, index, cfg):
    rng = np.random.default_rng([seed, epoch, index])
    return apply_augmentation(record.frames, record.camera, draw_augmentation(rng, cfg))


def train_loop(dataset, model, experiment, out_dir, on_epoch=None, run_id=None):
    """
    Train both networks on frame triplets.

    Parameters:
    dataset (list): FrameTripletRecord items
    model (ModelParams): Networks to train in place
    experiment (ExperimentConfig): All settings
    out_dir (str): Where checkpoints, the loss CSV and the run registry go
    on_epoch (callable): Optional callback(epoch, mean_losses_dict)
    run_id (str): Registry key (defaults to "seed<seed>")

    Returns:
    TrainResult: Loss curve and output paths
    """
    cfg = experiment.train
    if not dataset:
        raise DataError("training needs at least one frame triplet")
    os.makedirs(out_dir, exist_ok=True)
    batch_size = cfg.batch_size
    steps_per_epoch = len(dataset) // batch_size
    if steps_per_epoch == 0:
        raise DataError(f"dataset has {len(dataset)} triplets, fewer than one batch of {batch_size}")
    if len(dataset) % batch_size:
        logger.warning("Dropping %d triplets per epoch that do not fill a batch of %d",
                       len(dataset) % batch_size, batch_size)

    workers = 1 if strict_mode() else max(1, min(thread_count(), batch_size))
    state = AdamState()
    rows = []
    checkpoints = []
    loss_csv = os.path.join(out_dir, LOSS_CSV)
    final_path = os.path.join(out_dir, FINAL_CHECKPOINT)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for epoch in range(cfg.epochs):
            lr = learning_rate(epoch, cfg)
            if epoch == cfg.lr_drop_epoch:
                logger.info("Learning rate dropped to %g at epoch %d", lr, epoch)
            order = np.random.default_rng([cfg.seed, epoch]).permutation(len(dataset))
            for step in range(steps_per_epoch):
                indices = order[step * batch_size:(step + 1) * batch_size]
                samples = list(pool.map(
                    lambda i: _prepare(dataset[i], cfg.seed, epoch, int(i), cfg), indices))
                losses = train_step(model, samples, experiment, state, lr)
                rows.append({"epoch": epoch, "step": step, **losses})

            curve = loss_curve_frame(rows)
            means = epoch_means(curve).iloc[-1].to_dict()
            logger.info("Epoch %d: loss %.6f photo %.6f smooth %.6f mask %.3f (lr %g)",
                        epoch, means["loss_total"], means["loss_photo"], means["loss_smooth"],
                        means["mask_coverage"], lr)
            path = os.path.join(out_dir, f"epoch_{epoch:03d}.ckpt")
            save_model(path, model, experiment.model)
            checkpoints.append(path)
            write_loss_csv(loss_csv, rows)
            if on_epoch is not None:
                on_epoch(epoch, means)

    save_model(final_path, model, experiment.model)
    write_loss_csv(loss_csv, rows)
    curve = loss_curve_frame(rows)
    per_epoch = epoch_means(curve)
    final_losses = per_epoch.iloc[-1].to_dict() if not per_epoch.empty else {}
    register_run(out_dir, run_id or f"seed{cfg.seed}", experiment.to_dict(),
                 {"checkpoint": final_path, "loss_csv": loss_csv},
                 {k: float(v) for k, v in final_losses.items()})
    return TrainResult(curve=curve, epoch_losses=per_epoch, checkpoint=final_path,
                       loss_csv=loss_csv, checkpoints=checkpoints)


def run_training(experiment, out_dir, dataset, resume=None, on_epoch=None, run_id=None):
    """
    Build (or warm-start) the networks and train them.

    Parameters:
    experiment (ExperimentConfig): All settings
    out_dir (str): Output directory
    dataset (list): FrameTripletRecord items
    resume (str): Optional checkpoint to start from; the schedule restarts at epoch 0
    on_epoch (callable): Optional per-epoch callback
    run_id (str): Registry key

    Returns:
    tuple: (ModelParams, TrainResult)
    """
    with tc.default_dtype(experiment.train.dtype):
        if resume:
            model, _ = load_model(resume, scan_executor=experiment.model.scan_executor)
            logger.info("Resuming from %s", resume)
        else:
            model = init_model(experiment.model, np.random.default_rng(experiment.train.seed))
        os.makedirs(out_dir, exist_ok=True)
        if experiment.train.epochs == 0:
            logger.info("Zero-epoch run: writing the initial weights only")
        result = train_loop(dataset, model, experiment, out_dir, on_epoch=on_epoch, run_id=run_id)
    return model, result
