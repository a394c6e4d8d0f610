"""
Rigid-scene view synthesis: pinhole projection, backprojection, pose
warping and differentiable bilinear sampling.

Pixel centres sit at integer coordinates with the origin at the top-left
pixel; u runs along the width and v along the height.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from utils import tensor_core as tc
from utils.errors import ShapeError

logger = logging.getLogger(__name__)

MIN_Z = 1e-6


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"Image size must be positive, got {self.width}x{self.height}")

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def flipped(self):
        """Intrinsics after mirroring the image left-right."""
        return replace(self, cx=self.width - 1 - self.cx)


def pixel_grid(height, width, dtype=None):
    """(u, v) coordinates of every pixel centre, each [height, width]."""
    dtype = dtype or tc.get_default_dtype()
    v, u = np.meshgrid(np.arange(height, dtype=dtype), np.arange(width, dtype=dtype), indexing="ij")
    return u, v


def project(points, cam):
    """
    Perspective projection of camera-frame points.

    Parameters:
    points (Tensor): [..., 3] points (X, Y, Z)
    cam (CameraModel): Intrinsics

    Returns:
    tuple: (Tensor [..., 2] of (u, v), ndarray bool mask of points with Z > 0)
    """
    points = tc.as_tensor(points)
    if points.shape[-1] != 3:
        raise ShapeError("project", points.shape, detail="last axis must hold (X, Y, Z)")
    valid = points.data[..., 2] > 0
    x = tc.slice_(points, (Ellipsis, slice(0, 1)))
    y = tc.slice_(points, (Ellipsis, slice(1, 2)))
    # behind-camera points are flagged; the floor only keeps the division finite
    z = tc.maximum(tc.slice_(points, (Ellipsis, slice(2, 3))), MIN_Z)
    u = tc.add(tc.mul(tc.div(x, z), cam.fx), cam.cx)
    v = tc.add(tc.mul(tc.div(y, z), cam.fy), cam.cy)
    return tc.concat([u, v], axis=-1), valid


def backproject(u, v, depth, cam):
    """
    Lift pixels to camera-frame points: D * ((u - cx)/fx, (v - cy)/fy, 1).

    Parameters:
    u (ndarray): Pixel columns, same shape as depth
    v (ndarray): Pixel rows, same shape as depth
    depth (Tensor): Depth in meters
    cam (CameraModel): Intrinsics

    Returns:
    Tensor: [..., 3] points
    """
    depth = tc.as_tensor(depth)
    u = np.asarray(u, dtype=depth.dtype)
    v = np.asarray(v, dtype=depth.dtype)
    if u.shape != depth.shape or v.shape != depth.shape:
        raise ShapeError("backproject", u.shape, depth.shape)
    rays = np.stack([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, np.ones_like(u)], axis=-1)
    d = tc.reshape(depth, depth.shape + (1,))
    return tc.mul(d, rays)


def transform_points(points, matrix):
    """Apply a 4x4 rigid transform to [..., 3] points."""
    points, matrix = tc.as_tensor(points), tc.as_tensor(matrix)
    if matrix.shape != (4, 4):
        raise ShapeError("transform_points", points.shape, matrix.shape)
    rotation = tc.slice_(matrix, (slice(0, 3), slice(0, 3)))
    translation = tc.slice_(matrix, (slice(0, 3), 3))
    return tc.add(tc.matmul(points, tc.transpose(rotation)), translation)


def warp_coords(u, v, depth, matrix, cam):
    """
    Where each target pixel lands in the source view.

    Parameters:
    u, v (ndarray): Target pixel coordinates
    depth (Tensor): Target depth [H, W]
    matrix (Tensor): 4x4 transform from target camera to source camera
    cam (CameraModel): Intrinsics shared by both views

    Returns:
    tuple: (Tensor [H, W, 2] source coordinates, ndarray bool valid mask)
    """
    points = transform_points(backproject(u, v, depth, cam), matrix)
    coords, valid = project(points, cam)
    return coords, valid & (tc.as_tensor(depth).data > 0)


def _corners(u, v, height, width):
    uc = np.clip(u, 0, width - 1)
    vc = np.clip(v, 0, height - 1)
    u0 = np.minimum(np.floor(uc), max(width - 2, 0)).astype(np.intp)
    v0 = np.minimum(np.floor(vc), max(height - 2, 0)).astype(np.intp)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    wu = uc - u0 if width > 1 else np.zeros_like(uc)
    wv = vc - v0 if height > 1 else np.zeros_like(vc)
    return u0, u1, v0, v1, wu, wv


def bilinear_weights(coords, height, width):
    """
    Interpolation weights of the four neighbours (top-left, top-right,
    bottom-left, bottom-right) for each sample point, shape [..., 4].
    """
    coords = np.asarray(coords)
    *_, wu, wv = _corners(coords[..., 0], coords[..., 1], height, width)
    return np.stack([(1 - wu) * (1 - wv), wu * (1 - wv), (1 - wu) * wv, wu * wv], axis=-1)


def bilinear_sample(image, coords):
    """
    Sample an image at fractional pixel positions.

    Out-of-frame coordinates are clamped to the border and reported as
    invalid. The gradient flows to both the image and the coordinates; the
    coordinate gradient is zero along an axis that was clamped.

    Parameters:
    image (Tensor): Source image [H, W, C]
    coords (Tensor or ndarray): Sample positions [..., 2] as (u, v)

    Returns:
    tuple: (Tensor [..., C], ndarray bool valid mask [...])
    """
    image, coords = tc.as_tensor(image), tc.as_tensor(coords, dtype=image.dtype.type)
    if image.ndim != 3 or coords.shape[-1] != 2:
        raise ShapeError("bilinear_sample", image.shape, coords.shape)
    height, width, _ = image.shape
    u = coords.data[..., 0]
    v = coords.data[..., 1]
    # a non-finite component is replaced by 0 on its own; the sample stays invalid
    finite_u = np.isfinite(u)
    finite_v = np.isfinite(v)
    finite = finite_u & finite_v
    u = np.where(finite_u, u, 0.0)
    v = np.where(finite_v, v, 0.0)
    inside_u = (u >= 0) & (u <= width - 1)
    inside_v = (v >= 0) & (v <= height - 1)
    valid = finite & inside_u & inside_v

    u0, u1, v0, v1, wu, wv = _corners(u, v, height, width)
    img = image.data
    top_left, top_right = img[v0, u0], img[v0, u1]
    bottom_left, bottom_right = img[v1, u0], img[v1, u1]
    wu_, wv_ = wu[..., None], wv[..., None]
    out = ((1 - wu_) * (1 - wv_) * top_left + wu_ * (1 - wv_) * top_right
           + (1 - wu_) * wv_ * bottom_left + wu_ * wv_ * bottom_right)

    def vjp(g):
        g_image = np.zeros_like(img)
        np.add.at(g_image, (v0, u0), g * ((1 - wu_) * (1 - wv_)))
        np.add.at(g_image, (v0, u1), g * (wu_ * (1 - wv_)))
        np.add.at(g_image, (v1, u0), g * ((1 - wu_) * wv_))
        np.add.at(g_image, (v1, u1), g * (wu_ * wv_))
        d_du = (1 - wv_) * (top_right - top_left) + wv_ * (bottom_right - bottom_left)
        d_dv = (1 - wu_) * (bottom_left - top_left) + wu_ * (bottom_right - top_right)
        g_u = (g * d_du).sum(axis=-1) * (inside_u & finite_u & (width > 1))
        g_v = (g * d_dv).sum(axis=-1) * (inside_v & finite_v & (height > 1))
        return g_image, np.stack([g_u, g_v], axis=-1).astype(coords.dtype, copy=False)

    return tc.record_op("bilinear_sample", out, (image, coords), vjp), valid


def resize_bilinear(x, height, width):
    """
    Resize a [h, w] or [h, w, C] map with half-pixel-centre bilinear
    interpolation, clamped at the border.
    """
    x = tc.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = tc.reshape(x, x.shape + (1,))
    h, w = x.shape[:2]
    if (h, w) == (height, width):
        out = x
    else:
        u, v = pixel_grid(height, width, dtype=x.dtype.type)
        src_u = np.clip((u + 0.5) * (w / width) - 0.5, 0, w - 1)
        src_v = np.clip((v + 0.5) * (h / height) - 0.5, 0, h - 1)
        out, _ = bilinear_sample(x, np.stack([src_u, src_v], axis=-1))
    if squeeze:
        out = tc.reshape(out, (height, width))
    return out


def reconstruct(source, depth, matrix, cam):
    """
    Synthesise the target view from a source image.

    Parameters:
    source (Tensor): Source image [H, W, C]
    depth (Tensor): Target depth [H, W]
    matrix (Tensor): 4x4 target-to-source transform
    cam (CameraModel): Intrinsics

    Returns:
    tuple: (Tensor [H, W, C] reconstruction, ndarray bool valid mask)
    """
    depth = tc.as_tensor(depth)
    u, v = pixel_grid(*depth.shape, dtype=depth.dtype.type)
    coords, in_front = warp_coords(u, v, depth, matrix, cam)
    warped, in_frame = bilinear_sample(source, coords)
    return warped, in_front & in_frame
