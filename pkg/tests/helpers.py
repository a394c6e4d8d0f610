import numpy as np

from utils import tensor_core as tc
from utils.view_synthesis import CameraModel


def leaf(rng, *shape, low=None, high=None):
    values = rng.standard_normal(shape) if low is None else rng.uniform(low, high, size=shape)
    return tc.Tensor(values, requires_grad=True, dtype=np.float64)


def weighted_sum(out, weights):
    return tc.sum_(tc.mul(out, weights))


def tiny_camera(size=8):
    return CameraModel(fx=float(size), fy=float(size), cx=(size - 1) / 2, cy=(size - 1) / 2,
                       width=size, height=size)
