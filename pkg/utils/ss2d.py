"""
Two-dimensional selective scan.

A [H, W, C] feature map is unfolded into four sequences (row-major,
column-major and their reverses), each sequence runs through its own
selective scan, and the four outputs are put back in place and summed.
"""

import logging

import numpy as np

from utils import tensor_core as tc
from utils.errors import ShapeError
from utils.ssm_scan import init_ssm_params, ssm_forward

logger = logging.getLogger(__name__)

NUM_PATHS = 4


def scan_orders(height, width):
    """Flat-index permutations for the four scan paths."""
    row_major = np.arange(height * width)
    column_major = np.arange(height * width).reshape(height, width).T.ravel()
    return [row_major, column_major, row_major[::-1].copy(), column_major[::-1].copy()]


def inverse_order(order):
    inverse = np.empty_like(order)
    inverse[order] = np.arange(order.size)
    return inverse


def scan_expand(x):
    """
    Unfold a feature map along the four scan paths.

    Parameters:
    x (Tensor): Feature map [H, W, C]

    Returns:
    list: Four Tensors of shape [H*W, C]
    """
    x = tc.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError("scan_expand", x.shape, detail="expected [H, W, C]")
    height, width, channels = x.shape
    flat = tc.reshape(x, (height * width, channels))
    return [tc.take(flat, order, axis=0) for order in scan_orders(height, width)]


def scan_merge(sequences, height, width):
    """Put each path's sequence back in raster order and sum them."""
    if len(sequences) != NUM_PATHS:
        raise ValueError(f"scan_merge expects {NUM_PATHS} sequences, got {len(sequences)}")
    merged = None
    for sequence, order in zip(sequences, scan_orders(height, width)):
        restored = tc.take(sequence, inverse_order(order), axis=0)
        merged = restored if merged is None else tc.add(merged, restored)
    return tc.reshape(merged, (height, width, merged.shape[-1]))


def init_ss2d_params(d_model, state_dim, rng, dt_min=1e-3, dt_max=1e-1, dtype=None):
    """Four independent parameter sets, one per scan path."""
    return [init_ssm_params(d_model, state_dim, rng, dt_min, dt_max, dtype=dtype)
            for _ in range(NUM_PATHS)]


def ss2d_forward(x, path_params, executor="parallel"):
    """
    Scan a feature map in four directions and merge the results.

    Parameters:
    x (Tensor): Feature map [H, W, C]
    path_params (list of SsmParams): One set per scan path
    executor (str): Scan executor name

    Returns:
    Tensor: [H, W, C]
    """
    if len(path_params) != NUM_PATHS:
        raise ValueError(f"ss2d needs {NUM_PATHS} parameter sets, got {len(path_params)}")
    x = tc.as_tensor(x)
    height, width, _ = x.shape
    outputs = [ssm_forward(params, sequence, executor=executor)
               for params, sequence in zip(path_params, scan_expand(x))]
    return scan_merge(outputs, height, width)
