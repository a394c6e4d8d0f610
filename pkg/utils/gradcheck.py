"""
Finite-difference gradient checks and scan-executor equivalence sweeps.

Used by the test suite and by the ``gradcheck`` / ``scancheck`` commands.
"""

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from utils import tensor_core as tc
from utils.config import LossConfig
from utils.losses import total_loss
from utils.mambadepth_net import DepthOutputs, axis_angle_to_rotation
from utils.md_block import init_md_block, md_block_forward
from utils.ss2d import init_ss2d_params, ss2d_forward
from utils.ssm_scan import init_ssm_params, linear_recurrence, selective_scan, ssm_forward
from utils.view_synthesis import CameraModel, bilinear_sample

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
PRIMITIVE_TOLERANCE = 1e-6
COMPOSITE_TOLERANCE = 1e-5
LOSS_TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    name: str
    max_error: float
    tolerance: float
    probes: int

    @property
    def passed(self):
        return bool(np.isfinite(self.max_error) and self.max_error < self.tolerance)


def relative_error(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def check_gradients(fn, inputs, probes=100, eps=FD_STEP, rng=None):
    """
    Compare backward() with central differences at randomly chosen entries.

    Parameters:
    fn (callable): No-argument function returning a scalar Tensor built from ``inputs``
    inputs (list of Tensor): Leaves with requires_grad=True
    probes (int): Entries probed, drawn across all inputs by size
    eps (float): Finite-difference step
    rng (numpy.random.Generator): Probe selection

    Returns:
    float: Largest |analytic - numeric| / max(1, |numeric|)
    """
    rng = rng or np.random.default_rng(0)
    tc.reset_tape()
    for tensor in inputs:
        tensor.zero_grad()
    tc.backward(fn())

    sizes = np.array([t.size for t in inputs])
    total = int(sizes.sum())
    count = min(probes, total)
    flat = rng.choice(total, size=count, replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    worst = 0.0
    with tc.no_grad():
        for position in flat:
            which = int(np.searchsorted(offsets, position, side="right") - 1)
            tensor = inputs[which]
            index = np.unravel_index(position - offsets[which], tensor.shape)
            original = tensor.data[index]
            tensor.data[index] = original + eps
            plus = fn().item()
            tensor.data[index] = original - eps
            minus = fn().item()
            tensor.data[index] = original
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, float(relative_error(tensor.grad[index], numeric)))
    return worst


def _leaf(rng, *shape, low=None, high=None):
    if low is None:
        values = rng.standard_normal(shape)
    else:
        values = rng.uniform(low, high, size=shape)
    return tc.Tensor(values, requires_grad=True, dtype=np.float64)


def primitive_cases(rng):
    """(name, fn, inputs) for every differentiable primitive."""
    cases = []

    def add_case(name, build, *inputs):
        weights_rng = np.random.default_rng(rng.integers(1 << 31))
        weights = {}

        def fn():
            out = build(*inputs)
            if "w" not in weights:
                weights["w"] = weights_rng.standard_normal(out.shape)
            return tc.sum_(tc.mul(out, weights["w"]))

        cases.append((name, fn, list(inputs)))

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4)
    add_case("add", tc.add, a, b)
    add_case("sub", tc.sub, _leaf(rng, 3, 4), _leaf(rng, 3, 1))
    add_case("mul", tc.mul, _leaf(rng, 2, 3), _leaf(rng, 2, 3))
    add_case("div", tc.div, _leaf(rng, 2, 3), _leaf(rng, 2, 3, low=0.5, high=2.0))
    add_case("neg", tc.neg, _leaf(rng, 5))
    add_case("power", lambda x: tc.power(x, 3), _leaf(rng, 5))
    add_case("exp", tc.exp, _leaf(rng, 5))
    add_case("log", tc.log, _leaf(rng, 5, low=0.5, high=3.0))
    add_case("abs", tc.abs_, _leaf(rng, 6, low=0.2, high=1.0))
    add_case("sqrt", tc.sqrt, _leaf(rng, 5, low=0.5, high=3.0))
    add_case("sin", tc.sin, _leaf(rng, 5))
    add_case("cos", tc.cos, _leaf(rng, 5))
    add_case("sigmoid", tc.sigmoid, _leaf(rng, 5))
    add_case("silu", tc.silu, _leaf(rng, 5))
    add_case("softplus", tc.softplus, _leaf(rng, 5))
    add_case("maximum", tc.maximum, _leaf(rng, 6, low=0.0, high=1.0), _leaf(rng, 6, low=2.0, high=3.0))
    add_case("minimum", tc.minimum, _leaf(rng, 6, low=0.0, high=1.0), _leaf(rng, 6, low=2.0, high=3.0))
    add_case("clip", lambda x: tc.clip(x, -0.5, 0.5), _leaf(rng, 8, low=-0.45, high=0.45))
    add_case("sum", lambda x: tc.sum_(x, axis=1, keepdims=True), _leaf(rng, 3, 4))
    add_case("mean", lambda x: tc.mean(x, axis=(0, 2)), _leaf(rng, 2, 3, 4))
    add_case("matmul", tc.matmul, _leaf(rng, 2, 3, 4), _leaf(rng, 4, 5))
    add_case("reshape", lambda x: tc.reshape(x, (6, 2)), _leaf(rng, 3, 4))
    add_case("transpose", lambda x: tc.transpose(x, (2, 0, 1)), _leaf(rng, 2, 3, 4))
    add_case("slice", lambda x: tc.slice_(x, (slice(1, None), slice(None, None, 2))), _leaf(rng, 4, 5))
    add_case("take", lambda x: tc.take(x, np.array([2, 0, 2, 1]), axis=0), _leaf(rng, 3, 2))
    add_case("concat", lambda x, y: tc.concat([x, y], axis=1), _leaf(rng, 2, 3), _leaf(rng, 2, 2))
    add_case("stack", lambda x, y: tc.stack([x, y], axis=0), _leaf(rng, 2, 3), _leaf(rng, 2, 3))
    for mode in ("constant", "reflect", "edge"):
        add_case(f"pad_{mode}", lambda x, m=mode: tc.pad(x, ((1, 2), (2, 1), (0, 0)), mode=m),
                 _leaf(rng, 4, 4, 2))
    add_case("layer_norm", tc.layer_norm, _leaf(rng, 3, 6), _leaf(rng, 6), _leaf(rng, 6))
    add_case("conv2d", lambda x, w, b: tc.conv2d(x, w, b, stride=2, padding=1),
             _leaf(rng, 5, 6, 3), _leaf(rng, 3, 3, 3, 4), _leaf(rng, 4))
    add_case("depthwise_conv2d", lambda x, w, b: tc.depthwise_conv2d(x, w, b, padding=1),
             _leaf(rng, 4, 5, 3), _leaf(rng, 3, 3, 3), _leaf(rng, 3))
    add_case("avg_pool2d", lambda x: tc.avg_pool2d(x, 3, stride=1), _leaf(rng, 5, 5, 2))
    add_case("linear_recurrence", lambda x, y: linear_recurrence(x, y, "parallel"),
             _leaf(rng, 9, 2, low=0.1, high=0.95), _leaf(rng, 9, 2))
    return cases


def composite_cases(rng):
    """(name, fn, inputs, tolerance) for the assembled mechanisms."""
    cases = []

    params = init_ssm_params(2, 4, rng)
    u = _leaf(rng, 8, 2)
    weights = rng.standard_normal((8, 2))
    cases.append(("ssm_scan_sequential",
                  lambda: tc.sum_(tc.mul(ssm_forward(params, u, "sequential"), weights)),
                  [u] + list(tc.named_parameters(params).values()), COMPOSITE_TOLERANCE))

    path_params = init_ss2d_params(2, 2, rng)
    x = _leaf(rng, 3, 3, 2)
    w_ss2d = rng.standard_normal((3, 3, 2))
    cases.append(("ss2d", lambda: tc.sum_(tc.mul(ss2d_forward(x, path_params), w_ss2d)),
                  [x] + list(tc.named_parameters(path_params).values()), COMPOSITE_TOLERANCE))

    block = init_md_block(8, rng, state_dim=4)
    xb = _leaf(rng, 4, 4, 8)
    w_block = rng.standard_normal((4, 4, 8))
    cases.append(("md_block", lambda: tc.sum_(tc.mul(md_block_forward(xb, block), w_block)),
                  [xb] + list(tc.named_parameters(block).values()), COMPOSITE_TOLERANCE))

    image = _leaf(rng, 5, 6, 2)
    # keep coordinates away from integers where the sampler has kinks
    base = rng.integers(0, 4, size=(4, 4, 2)).astype(np.float64)
    coords = tc.Tensor(base + rng.uniform(0.2, 0.8, size=(4, 4, 2)), requires_grad=True, dtype=np.float64)
    w_sample = rng.standard_normal((4, 4, 2))
    cases.append(("bilinear_sample",
                  lambda: tc.sum_(tc.mul(bilinear_sample(image, coords)[0], w_sample)),
                  [image, coords], COMPOSITE_TOLERANCE))

    axis_angle = _leaf(rng, 3)
    w_rot = rng.standard_normal((3, 3))
    cases.append(("rodrigues", lambda: tc.sum_(tc.mul(axis_angle_to_rotation(axis_angle), w_rot)),
                  [axis_angle], COMPOSITE_TOLERANCE))

    cases.append(desk_loss_case(rng))
    return cases


def desk_loss_case(rng, size=8):
    """total_loss as a function of an 8x8 disparity map on a small textured scene."""
    cam = CameraModel(fx=float(size), fy=float(size), cx=(size - 1) / 2, cy=(size - 1) / 2,
                      width=size, height=size)
    target = rng.uniform(0.1, 0.9, size=(size, size, 3))
    sources = [rng.uniform(0.1, 0.9, size=(size, size, 3)) for _ in range(2)]
    poses = []
    for sign in (-1.0, 1.0):
        matrix = np.eye(4)
        matrix[0, 3] = 0.03 * sign
        matrix[1, 3] = 0.011
        poses.append(matrix)
    disp = tc.Tensor(rng.uniform(0.2, 0.8, size=(size, size)), requires_grad=True, dtype=np.float64)
    outputs = DepthOutputs(disparities=[disp], depths=[], upsampled_disparities=[disp])
    cfg = LossConfig()

    def fn():
        return total_loss(target, sources, outputs, poses, cam, cfg).total

    return ("total_loss", fn, [disp], LOSS_TOLERANCE)


def run_gradcheck_suites(seed=0, probes=100):
    """
    Run every primitive and composite check.

    Returns:
    pandas.DataFrame: name, max_error, tolerance, probes, passed
    """
    results = []
    with tc.default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        for name, fn, inputs in primitive_cases(rng):
            error = check_gradients(fn, inputs, probes=probes, rng=rng)
            results.append(GradcheckResult(name, error, PRIMITIVE_TOLERANCE, probes))
        for name, fn, inputs, tolerance in composite_cases(rng):
            error = check_gradients(fn, inputs, probes=probes, rng=rng)
            results.append(GradcheckResult(name, error, tolerance, probes))
    for result in results:
        logger.debug("gradcheck %-20s %.3e (tol %.0e)", result.name, result.max_error, result.tolerance)
    return pd.DataFrame([{**vars(r), "passed": r.passed} for r in results])


def random_scan_case(rng, max_length=257):
    length = int(rng.integers(1, max_length + 1))
    channels = int(rng.integers(1, 4))
    state_dim = int(rng.integers(1, 5))
    a_bar = rng.uniform(0.0, 1.0, size=(length, channels, state_dim))
    b_bar = rng.standard_normal((length, channels, state_dim))
    c = rng.standard_normal((length, state_dim))
    u = rng.standard_normal((length, channels))
    d = rng.standard_normal(channels)
    return a_bar, b_bar, c, u, d


def scan_equivalence(cases=1000, seed=0, max_length=257):
    """Largest |parallel - sequential| output difference over random scans."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    with tc.default_dtype(np.float64), tc.no_grad():
        for _ in range(cases):
            args = random_scan_case(rng, max_length)
            sequential = selective_scan(*args, executor="sequential").data
            parallel = selective_scan(*args, executor="parallel").data
            worst = max(worst, float(np.max(np.abs(parallel - sequential))))
    return worst
