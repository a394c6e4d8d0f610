"""
DepthNet and PoseNet.

DepthNet is a U-shaped network of MD blocks: a 4x4 patch embedding, four
encoder stages joined by 2x feature fusions, four decoder stages joined by
2x feature decompositions with additive encoder skips, and one sigmoid
disparity head per decoder stage. PoseNet is a small strided conv stack
that regresses a 6-DoF relative pose between two frames.
"""

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from utils import tensor_core as tc
from utils.config import NetConfig
from utils.errors import CheckpointError, ConfigError, DimensionError, ShapeError
from utils.file_formats import load_checkpoint, save_checkpoint
from utils.md_block import LayerNormParams, init_layer_norm, init_md_block, md_block_forward
from utils.ssm_scan import xavier_uniform
from utils.view_synthesis import resize_bilinear

logger = logging.getLogger(__name__)

POSE_SCALE = 0.01
THETA_EPS = 1e-12

# d(K)/d(r) for the skew matrix K = [r]_x, one row per axis, K flattened row-major
_SKEW_GENERATORS = np.array([
    [0, 0, 0, 0, 0, -1, 0, 1, 0],
    [0, 0, 1, 0, 0, 0, -1, 0, 0],
    [0, -1, 0, 1, 0, 0, 0, 0, 0],
], dtype=np.float64)


@dataclass
class FusionParams:
    weight: tc.Tensor                  # [4C, 2C]
    norm: LayerNormParams = None


@dataclass
class HeadParams:
    weight: tc.Tensor                  # [3, 3, C, 1]
    bias: tc.Tensor                    # [1]


@dataclass
class DepthNetParams:
    embed_weight: tc.Tensor            # [patch*patch*3, C]
    embed_bias: tc.Tensor              # [C]
    embed_norm: LayerNormParams
    encoder: list                      # 4 stages, each a list of MdBlockParams
    fusions: list                      # 3 FusionParams
    decompositions: list               # 3 weights [C_in, 2*C_in]
    decoder: list                      # 4 stages, each a list of MdBlockParams
    heads: list                        # 4 HeadParams, finest scale first


@dataclass
class PoseNetParams:
    convs: list                        # (weight [3,3,C_in,C_out], bias [C_out]) pairs
    head_weight: tc.Tensor             # [1, 1, C_last, 6]
    head_bias: tc.Tensor               # [6]


@dataclass
class ModelParams:
    depth: DepthNetParams
    pose: PoseNetParams


@dataclass
class DepthOutputs:
    """Per-scale predictions; index 0 is the finest (1/4 resolution) scale."""

    disparities: list
    depths: list
    upsampled_disparities: list = field(default_factory=list)


@dataclass
class PoseTransform:
    axis_angle: tc.Tensor
    translation: tc.Tensor
    rotation: tc.Tensor
    matrix: tc.Tensor


# ---------------------------------------------------------------------------
# initialisation


def _zeros(shape, dtype):
    return tc.Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def _conv_weight(rng, kernel, c_in, c_out, dtype):
    return xavier_uniform(rng, kernel * kernel * c_in, kernel * kernel * c_out,
                          shape=(kernel, kernel, c_in, c_out), dtype=dtype)


def init_depthnet(config, rng, dtype=None):
    """
    Build DepthNet parameters with Xavier-uniform weights.

    Parameters:
    config (NetConfig): Architecture settings
    rng (numpy.random.Generator): Source of randomness
    dtype: Parameter dtype (default dtype when None)

    Returns:
    DepthNetParams: Fresh parameters
    """
    dims = config.encoder_dims
    patch_values = config.patch_size * config.patch_size * 3

    def blocks(channels, count):
        return [init_md_block(channels, rng, config.state_dim, config.expand,
                              config.dt_min, config.dt_max, dtype=dtype)
                for _ in range(count)]

    encoder = [blocks(dims[i], config.encoder_depths[i]) for i in range(4)]
    fusions = [FusionParams(weight=xavier_uniform(rng, 4 * dims[i], 2 * dims[i], dtype=dtype),
                            norm=init_layer_norm(2 * dims[i], dtype))
               for i in range(3)]
    decoder_dims = config.decoder_dims
    decompositions = [xavier_uniform(rng, decoder_dims[i], 2 * decoder_dims[i], dtype=dtype)
                      for i in range(3)]
    decoder = [blocks(decoder_dims[i], config.decoder_depths[i]) for i in range(4)]
    heads = [HeadParams(weight=_conv_weight(rng, 3, dims[s], 1, dtype), bias=_zeros((1,), dtype))
             for s in range(config.num_scales)]

    return DepthNetParams(
        embed_weight=xavier_uniform(rng, patch_values, dims[0], dtype=dtype),
        embed_bias=_zeros((dims[0],), dtype),
        embed_norm=init_layer_norm(dims[0], dtype),
        encoder=encoder,
        fusions=fusions,
        decompositions=decompositions,
        decoder=decoder,
        heads=heads,
    )


def init_posenet(config, rng, dtype=None):
    convs = []
    c_in = 6
    for c_out in config.pose_channels:
        convs.append((_conv_weight(rng, 3, c_in, c_out, dtype), _zeros((c_out,), dtype)))
        c_in = c_out
    return PoseNetParams(
        convs=convs,
        head_weight=_conv_weight(rng, 1, c_in, 6, dtype),
        head_bias=_zeros((6,), dtype),
    )


def init_model(config, rng, dtype=None):
    return ModelParams(depth=init_depthnet(config, rng, dtype), pose=init_posenet(config, rng, dtype))


def parameter_breakdown(config, seed=0):
    """
    Trainable parameter count per component.

    Parameters:
    config (NetConfig): Architecture settings
    seed (int): Seed for the throwaway initialisation

    Returns:
    dict: Component name to parameter count, in network order
    """
    model = init_model(config, np.random.default_rng(seed))
    depth = model.depth
    breakdown = {
        "patch_embed": tc.count_parameters([depth.embed_weight, depth.embed_bias, depth.embed_norm]),
    }
    for i, stage in enumerate(depth.encoder):
        breakdown[f"encoder_stage_{i}"] = tc.count_parameters(stage)
        if i < len(depth.fusions):
            breakdown[f"fusion_{i}"] = tc.count_parameters(depth.fusions[i])
    for i, stage in enumerate(depth.decoder):
        if i > 0:
            breakdown[f"decomposition_{i - 1}"] = tc.count_parameters(depth.decompositions[i - 1])
        breakdown[f"decoder_stage_{i}"] = tc.count_parameters(stage)
    breakdown["disparity_heads"] = tc.count_parameters(depth.heads)
    breakdown["posenet"] = tc.count_parameters(model.pose)
    return breakdown


# ---------------------------------------------------------------------------
# DepthNet pieces


def check_extents(height, width, divisor, what="image"):
    if height % divisor or width % divisor or height < divisor or width < divisor:
        raise DimensionError(what, (height, width), divisor)


def space_to_depth(x, factor=2):
    """[H, W, C] -> [H/f, W/f, f*f*C], each vector ordered (dy, dx, c)."""
    x = tc.as_tensor(x)
    height, width, channels = x.shape
    blocks = tc.reshape(x, (height // factor, factor, width // factor, factor, channels))
    blocks = tc.transpose(blocks, (0, 2, 1, 3, 4))
    return tc.reshape(blocks, (height // factor, width // factor, factor * factor * channels))


def depth_to_space(x, factor=2):
    """Inverse of ``space_to_depth``: [H, W, f*f*C] -> [f*H, f*W, C]."""
    x = tc.as_tensor(x)
    height, width, channels = x.shape
    out_channels = channels // (factor * factor)
    blocks = tc.reshape(x, (height, width, factor, factor, out_channels))
    blocks = tc.transpose(blocks, (0, 2, 1, 3, 4))
    return tc.reshape(blocks, (height * factor, width * factor, out_channels))


def patch_embed(image, params, patch_size=4, divisor=None):
    """
    Cut the image into non-overlapping patches, embed and layer-normalise.

    Parameters:
    image (Tensor): RGB image [H, W, 3]
    params (DepthNetParams): Supplies embed_weight, embed_bias, embed_norm
    patch_size (int): Patch edge length
    divisor (int): Required divisor of H and W (defaults to patch_size)

    Returns:
    Tensor: [H/p, W/p, C]
    """
    image = tc.as_tensor(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ShapeError("patch_embed", image.shape, detail="expected [H, W, 3]")
    height, width, _ = image.shape
    check_extents(height, width, divisor or patch_size, what="patch_embed")
    patches = space_to_depth(image, patch_size)
    embedded = tc.linear(patches, params.embed_weight, params.embed_bias)
    return tc.layer_norm(embedded, params.embed_norm.weight, params.embed_norm.bias)


def feature_fusion(x, fusion):
    """2x2 neighbourhood gather, linear 4C -> 2C, optional layer norm."""
    x = tc.as_tensor(x)
    height, width, _ = x.shape
    if height % 2 or width % 2:
        raise DimensionError("feature_fusion", (height, width), 2)
    merged = tc.linear(space_to_depth(x, 2), fusion.weight)
    if fusion.norm is not None:
        merged = tc.layer_norm(merged, fusion.norm.weight, fusion.norm.bias)
    return merged


def feature_decomposition(x, weight):
    """Linear C -> 2C, then spread each vector over a 2x2 block of C/2 channels."""
    x = tc.as_tensor(x)
    channels = x.shape[-1]
    if channels % 2:
        raise DimensionError("feature_decomposition channels", (channels,), 2)
    return depth_to_space(tc.linear(x, weight), 2)


def disparity_head(x, head):
    out = tc.sigmoid(tc.conv2d(x, head.weight, head.bias, padding=1))
    return tc.reshape(out, out.shape[:2])


def disp_to_depth(disp, min_depth, max_depth):
    """Bounded inverse mapping from a sigmoid disparity in (0, 1) to meters."""
    min_disp = 1.0 / max_depth
    max_disp = 1.0 / min_depth
    scaled = tc.add(tc.mul(disp, max_disp - min_disp), min_disp)
    return tc.div(1.0, scaled)


def depthnet_forward(image, params, config):
    """
    Predict multi-scale disparities for one image.

    Parameters:
    image (Tensor): RGB image [H, W, 3], H and W divisible by 32
    params (DepthNetParams): Network weights
    config (NetConfig): Architecture settings

    Returns:
    DepthOutputs: disparities/depths finest first, plus full-resolution
        upsampled disparities
    """
    image = tc.as_tensor(image)
    height, width = image.shape[:2]
    check_extents(height, width, config.input_divisor)
    executor = config.scan_executor

    x = patch_embed(image, params, config.patch_size)
    skips = []
    for i, stage in enumerate(params.encoder):
        for block in stage:
            x = md_block_forward(x, block, executor)
        skips.append(x)
        if i < len(params.fusions):
            x = feature_fusion(x, params.fusions[i])

    decoded = []
    for i, stage in enumerate(params.decoder):
        if i > 0:
            x = tc.add(feature_decomposition(x, params.decompositions[i - 1]), skips[-1 - i])
        for block in stage:
            x = md_block_forward(x, block, executor)
        decoded.append(x)

    disparities = [disparity_head(decoded[-1 - s], params.heads[s]) for s in range(config.num_scales)]
    depths = [disp_to_depth(d, config.min_depth, config.max_depth) for d in disparities]
    upsampled = [resize_bilinear(d, height, width) for d in disparities]
    logger.debug("depthnet: %s -> %s", image.shape, [d.shape for d in disparities])
    return DepthOutputs(disparities=disparities, depths=depths, upsampled_disparities=upsampled)


def predict_disparity(image, params, config):
    """Full-resolution finest-scale disparity as a numpy array (no tape)."""
    with tc.no_grad():
        outputs = depthnet_forward(image, params, config)
    return outputs.upsampled_disparities[0].numpy()


# ---------------------------------------------------------------------------
# PoseNet


def axis_angle_to_rotation(axis_angle):
    """
    Rodrigues' formula, differentiable in the axis-angle vector.

    R = I + sin(t)/t K + (1 - cos t)/t^2 K^2 with t = |r| and K = [r]_x.
    """
    r = tc.as_tensor(axis_angle)
    if r.shape != (3,):
        raise ShapeError("axis_angle_to_rotation", r.shape, (3,))
    theta = tc.sqrt(tc.add(tc.sum_(tc.mul(r, r)), THETA_EPS))
    skew = tc.reshape(tc.matmul(tc.reshape(r, (1, 3)), _SKEW_GENERATORS.astype(r.dtype)), (3, 3))
    skew_sq = tc.matmul(skew, skew)
    first = tc.div(tc.sin(theta), theta)
    half_sin = tc.sin(tc.mul(theta, 0.5))
    second = tc.div(tc.mul(tc.mul(half_sin, half_sin), 2.0), tc.mul(theta, theta))
    identity = np.eye(3, dtype=r.dtype)
    return tc.add(tc.add(identity, tc.mul(first, skew)), tc.mul(second, skew_sq))


def pose_from_vector(vector):
    """Turn (axis-angle, translation) into a PoseTransform with 4x4 matrix."""
    vector = tc.as_tensor(vector)
    if vector.shape != (6,):
        raise ShapeError("pose_from_vector", vector.shape, (6,))
    axis_angle = tc.slice_(vector, slice(0, 3))
    translation = tc.slice_(vector, slice(3, 6))
    rotation = axis_angle_to_rotation(axis_angle)
    top = tc.concat([rotation, tc.reshape(translation, (3, 1))], axis=1)
    bottom = np.array([[0.0, 0.0, 0.0, 1.0]], dtype=vector.dtype)
    matrix = tc.concat([top, bottom], axis=0)
    return PoseTransform(axis_angle=axis_angle, translation=translation, rotation=rotation, matrix=matrix)


def invert_pose(pose):
    """Rigid inverse: (R, t) -> (R^T, -R^T t)."""
    rotation_t = tc.transpose(pose.rotation)
    translation = tc.neg(tc.reshape(tc.matmul(rotation_t, tc.reshape(pose.translation, (3, 1))), (3,)))
    top = tc.concat([rotation_t, tc.reshape(translation, (3, 1))], axis=1)
    bottom = np.array([[0.0, 0.0, 0.0, 1.0]], dtype=rotation_t.dtype)
    return PoseTransform(axis_angle=tc.neg(pose.axis_angle), translation=translation,
                         rotation=rotation_t, matrix=tc.concat([top, bottom], axis=0))


def posenet_vector(frame_pair, params):
    """Raw 6-vector (axis-angle, translation) for a [H, W, 6] frame pair."""
    x = tc.as_tensor(frame_pair)
    if x.ndim != 3 or x.shape[-1] != 6:
        raise ShapeError("posenet", x.shape, detail="expected [H, W, 6]")
    for weight, bias in params.convs:
        x = tc.silu(tc.conv2d(x, weight, bias, stride=2, padding=1))
    x = tc.conv2d(x, params.head_weight, params.head_bias)
    return tc.mul(tc.mean(x, axis=(0, 1)), POSE_SCALE)


def posenet_forward(frame_pair, params):
    """
    Relative pose between two channel-concatenated RGB frames.

    Parameters:
    frame_pair (Tensor): [H, W, 6], earlier frame first
    params (PoseNetParams): Network weights

    Returns:
    PoseTransform: Rotation, translation and 4x4 matrix
    """
    return pose_from_vector(posenet_vector(frame_pair, params))


# ---------------------------------------------------------------------------
# checkpoints


def state_dict(model):
    """Copies of every parameter array, keyed by dotted name."""
    return {name: t.data.copy() for name, t in tc.named_parameters(model).items()}


def load_state(model, tensors):
    """Copy checkpoint arrays into ``model`` in place (names and shapes must match)."""
    params = tc.named_parameters(model)
    missing = sorted(set(params) - set(tensors))
    if missing:
        raise CheckpointError(f"checkpoint is missing {len(missing)} tensors, first '{missing[0]}'")
    unexpected = sorted(set(tensors) - set(params))
    if unexpected:
        raise CheckpointError(f"checkpoint has unknown tensor '{unexpected[0]}'")
    for name, param in params.items():
        value = tensors[name]
        if value.shape != param.shape:
            raise CheckpointError(f"'{name}': checkpoint shape {value.shape} != model shape {param.shape}")
        param.data = np.ascontiguousarray(value, dtype=param.dtype)
        param.zero_grad()


def save_model(path, model, config):
    save_checkpoint(path, state_dict(model), config=config)


def load_model(path, dtype=None, **overrides):
    """
    Rebuild a model from a checkpoint.

    Parameters:
    path (str): Checkpoint file
    dtype: Parameter dtype (default dtype when None)
    overrides: NetConfig fields that are not stored (e.g. scan_executor)

    Returns:
    tuple: (ModelParams, NetConfig)
    """
    tensors, stored = load_checkpoint(path)
    known = {f.name for f in fields(NetConfig)}
    values = {k: v for k, v in stored.items() if k in known}
    values.update(overrides)
    try:
        config = NetConfig(**values)
    except (TypeError, ConfigError) as e:
        raise CheckpointError(f"checkpoint holds an unusable network config: {e}") from e
    model = init_model(config, np.random.default_rng(0), dtype=dtype)
    load_state(model, tensors)
    logger.info("Loaded %d tensors from %s", len(tensors), path)
    return model, config


def rotation_is_orthonormal(rotation, tol=1e-6):
    r = np.asarray(rotation.data if isinstance(rotation, tc.Tensor) else rotation)
    return bool(np.allclose(r.T @ r, np.eye(3), atol=tol) and math.isclose(np.linalg.det(r), 1.0, abs_tol=tol))
