"""The gated two-pathway block used at every encoder and decoder stage."""

import logging
from dataclasses import dataclass

import numpy as np

from utils import tensor_core as tc
from utils.errors import ShapeError
from utils.ss2d import init_ss2d_params, ss2d_forward
from utils.ssm_scan import xavier_uniform

logger = logging.getLogger(__name__)

DWCONV_KERNEL = 3


@dataclass
class LayerNormParams:
    weight: tc.Tensor
    bias: tc.Tensor


@dataclass
class MdBlockParams:
    norm1: LayerNormParams
    gate_linear: tc.Tensor     # [C, E*C]
    in_linear: tc.Tensor       # [C, E*C]
    dwconv: tc.Tensor          # [3, 3, E*C]
    dwconv_bias: tc.Tensor     # [E*C]
    ss2d: list                 # four SsmParams at width E*C
    norm2: LayerNormParams     # over E*C
    out_linear: tc.Tensor      # [E*C, C]

    @property
    def channels(self):
        return self.in_linear.shape[0]


def init_layer_norm(channels, dtype=None):
    return LayerNormParams(
        weight=tc.Tensor(np.ones(channels), requires_grad=True, dtype=dtype),
        bias=tc.Tensor(np.zeros(channels), requires_grad=True, dtype=dtype),
    )


def init_md_block(channels, rng, state_dim=16, expand=2, dt_min=1e-3, dt_max=1e-1, dtype=None):
    """
    Build an MD block with Xavier-uniform linear weights.

    Parameters:
    channels (int): Input/output channels C
    rng (numpy.random.Generator): Source of randomness
    state_dim (int): Scan state size N
    expand (int): Inner width multiplier E

    Returns:
    MdBlockParams: Fresh parameters
    """
    inner = expand * channels
    kernel_fan = DWCONV_KERNEL * DWCONV_KERNEL
    return MdBlockParams(
        norm1=init_layer_norm(channels, dtype),
        gate_linear=xavier_uniform(rng, channels, inner, dtype=dtype),
        in_linear=xavier_uniform(rng, channels, inner, dtype=dtype),
        dwconv=xavier_uniform(rng, kernel_fan, kernel_fan,
                              shape=(DWCONV_KERNEL, DWCONV_KERNEL, inner), dtype=dtype),
        dwconv_bias=tc.Tensor(np.zeros(inner), requires_grad=True, dtype=dtype),
        ss2d=init_ss2d_params(inner, state_dim, rng, dt_min, dt_max, dtype=dtype),
        norm2=init_layer_norm(inner, dtype),
        out_linear=xavier_uniform(rng, inner, channels, dtype=dtype),
    )


def md_block_forward(x, params, executor="parallel"):
    """
    out = x + out_linear(norm2(ss2d(silu(dwconv(in_linear(n))))) * silu(gate_linear(n))),
    with n = norm1(x).
    """
    x = tc.as_tensor(x)
    if x.ndim != 3 or x.shape[-1] != params.channels:
        raise ShapeError("md_block", x.shape, params.in_linear.shape)
    normed = tc.layer_norm(x, params.norm1.weight, params.norm1.bias)

    gate = tc.silu(tc.linear(normed, params.gate_linear))

    branch = tc.linear(normed, params.in_linear)
    branch = tc.depthwise_conv2d(branch, params.dwconv, params.dwconv_bias, padding=1)
    branch = tc.silu(branch)
    branch = ss2d_forward(branch, params.ss2d, executor=executor)
    branch = tc.layer_norm(branch, params.norm2.weight, params.norm2.bias)

    return tc.add(x, tc.linear(tc.mul(branch, gate), params.out_linear))
