"""
Procedural rigid scenes with exact ground truth.

A pinhole camera translates sideways past textured planes. Fronto-parallel
planes sit at depths f*step/s for integer s, so between consecutive frames
every point on them moves by exactly s pixels and warping with the true
depth and pose reproduces frames to floating-point precision. A slanted
floor (inexact under bilinear resampling) and an untextured patch can be
added to exercise the interpolation and auto-mask paths.
"""

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from utils import tensor_core as tc
from utils.data_processor import make_triplets
from utils.file_formats import write_image, write_pfm
from utils.view_synthesis import CameraModel, pixel_grid, warp_coords

logger = logging.getLogger(__name__)

DEFAULT_STEP = 0.1
TEXTURE_TERMS = 4


@dataclass
class Plane:
    """A planar surface n . X = offset with a sinusoid texture in plane coordinates."""

    normal: np.ndarray
    offset: float
    basis: np.ndarray                # [2, 3] rows spanning the plane
    bounds: tuple = None             # (a_min, a_max, b_min, b_max) in plane coordinates
    base_color: np.ndarray = None
    frequencies: np.ndarray = None   # [K, 2] rad per meter
    phases: np.ndarray = None        # [K, 3]
    amplitudes: np.ndarray = None    # [K, 3]

    def texture(self, coords):
        color = np.broadcast_to(self.base_color, coords.shape[:-1] + (3,)).copy()
        if self.frequencies is None:
            return color
        for freq, phase, amp in zip(self.frequencies, self.phases, self.amplitudes):
            angle = coords @ freq
            color += amp * np.sin(angle[..., None] + phase)
        return color


@dataclass
class SyntheticScene:
    frames: list
    depths: list
    surface_ids: list
    camera: CameraModel
    positions: np.ndarray            # camera centre per frame, [N, 3]
    planes: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def relative_pose(self, target, source):
        """4x4 transform taking target-camera points to source-camera points."""
        matrix = np.eye(4)
        matrix[:3, 3] = self.positions[target] - self.positions[source]
        return matrix

    def consistency_mask(self, target, source):
        """
        Pixels of ``target`` that land on the same visible surface point in
        ``source`` (in frame, same surface, matching depth).
        """
        cam = self.camera
        u, v = pixel_grid(cam.height, cam.width, dtype=np.float64)
        with tc.no_grad():
            coords, in_front = warp_coords(u, v, tc.Tensor(self.depths[target], dtype=np.float64),
                                           tc.Tensor(self.relative_pose(target, source)), cam)
        su = np.rint(coords.data[..., 0]).astype(int)
        sv = np.rint(coords.data[..., 1]).astype(int)
        inside = in_front & (su >= 0) & (su < cam.width) & (sv >= 0) & (sv < cam.height)
        su = np.clip(su, 0, cam.width - 1)
        sv = np.clip(sv, 0, cam.height - 1)

        # depth the target point has in the source camera (translation only)
        shift = self.positions[target] - self.positions[source]
        expected = self.depths[target] + shift[2]
        same_surface = self.surface_ids[source][sv, su] == self.surface_ids[target]
        same_depth = np.abs(self.depths[source][sv, su] - expected) <= 1e-6 * np.maximum(expected, 1.0)
        return inside & same_surface & same_depth

    def triplets(self):
        return make_triplets(self.frames, self.camera, self.depths,
                             [f"synthetic_{k:05d}" for k in range(len(self.frames))])

    def triplet_poses(self, index):
        """Ground-truth transforms (target -> t-1, target -> t+1) for frame ``index``."""
        return [self.relative_pose(index, index - 1), self.relative_pose(index, index + 1)]


def _textured_plane(rng, normal, offset, basis, bounds, depth_hint, focal):
    # texture periods of 4-12 pixels at the plane's typical depth
    pixel_size = depth_hint / focal
    periods = rng.uniform(4.0, 12.0, size=TEXTURE_TERMS) * pixel_size
    angles = rng.uniform(0.0, np.pi, size=TEXTURE_TERMS)
    frequencies = (2 * np.pi / periods)[:, None] * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return Plane(
        normal=np.asarray(normal, dtype=np.float64),
        offset=float(offset),
        basis=np.asarray(basis, dtype=np.float64),
        bounds=bounds,
        base_color=rng.uniform(0.4, 0.6, size=3),
        frequencies=frequencies,
        phases=rng.uniform(0.0, 2 * np.pi, size=(TEXTURE_TERMS, 3)),
        amplitudes=rng.uniform(0.05, 0.09, size=(TEXTURE_TERMS, 3)),
    )


def build_planes(rng, focal, step, centre_x, slanted=False, low_texture=False):
    """
    Default layout: a background wall at shift 1 px/frame, a mid plane at
    2 px/frame and a near plane at 4 px/frame.
    """
    fronto_basis = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]
    wall_depth = focal * step / 1
    mid_depth = focal * step / 2
    near_depth = focal * step / 4
    planes = [
        _textured_plane(rng, [0, 0, 1], wall_depth, fronto_basis, None, wall_depth, focal),
        _textured_plane(rng, [0, 0, 1], mid_depth, fronto_basis,
                        (centre_x - 1.2, centre_x + 0.4, -0.8, 0.6), mid_depth, focal),
        _textured_plane(rng, [0, 0, 1], near_depth, fronto_basis,
                        (centre_x + 0.1, centre_x + 0.6, -0.3, 0.5), near_depth, focal),
    ]
    if slanted:
        floor_height = 0.9
        planes.append(_textured_plane(rng, [0, 1, 0], floor_height,
                                      [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], None, wall_depth, focal))
    if low_texture:
        flat = Plane(normal=np.array([0.0, 0.0, 1.0]), offset=mid_depth, basis=np.asarray(fronto_basis),
                     bounds=(centre_x + 0.5, centre_x + 1.3, -1.3, -0.7),
                     base_color=np.full(3, 0.5))
        planes.append(flat)
    return planes


def render(planes, camera, position):
    """
    Ray-cast one frame.

    Returns:
    tuple: (image [H, W, 3], depth [H, W], surface id [H, W])
    """
    u, v = pixel_grid(camera.height, camera.width, dtype=np.float64)
    rays = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1)
    best = np.full(u.shape, np.inf)
    ids = np.full(u.shape, -1, dtype=int)
    image = np.zeros(u.shape + (3,))

    for index, plane in enumerate(planes):
        denom = rays @ plane.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane.offset - plane.normal @ position) / denom
        hit = position + t[..., None] * rays
        coords = hit @ plane.basis.T
        visible = np.isfinite(t) & (t > 0) & (np.abs(denom) > 1e-12)
        if plane.bounds is not None:
            a_min, a_max, b_min, b_max = plane.bounds
            visible &= (coords[..., 0] >= a_min) & (coords[..., 0] <= a_max)
            visible &= (coords[..., 1] >= b_min) & (coords[..., 1] <= b_max)
        closer = visible & (t < best)
        best = np.where(closer, t, best)
        ids = np.where(closer, index, ids)
        image = np.where(closer[..., None], plane.texture(np.where(closer[..., None], coords, 0.0)), image)

    if np.any(ids < 0):
        raise ValueError("scene leaves some pixels without a surface")
    # rays have unit z, so the ray parameter is the depth
    return np.clip(image, 0.0, 1.0), best, ids


def make_scene(num_frames=20, width=64, height=64, seed=0, step=DEFAULT_STEP,
               static=False, slanted=False, low_texture=False):
    """
    Render a laterally translating camera past textured planes.

    Parameters:
    num_frames (int): Frames to render (at least 3)
    width (int): Image width
    height (int): Image height
    seed (int): Texture seed
    step (float): Sideways camera motion per frame in meters
    static (bool): Keep the camera still
    slanted (bool): Add a textured floor plane
    low_texture (bool): Add an untextured patch

    Returns:
    SyntheticScene: Frames, depths and poses
    """
    if num_frames < 3:
        raise ValueError(f"a scene needs at least 3 frames, got {num_frames}")
    focal = float(width)
    camera = CameraModel(fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                         width=width, height=height)
    rng = np.random.default_rng(seed)
    motion = 0.0 if static else step
    positions = np.zeros((num_frames, 3))
    positions[:, 0] = np.arange(num_frames) * motion
    centre_x = positions[num_frames // 2, 0]
    planes = build_planes(rng, focal, step, centre_x, slanted=slanted, low_texture=low_texture)

    frames, depths, ids = [], [], []
    for position in positions:
        image, depth, surface = render(planes, camera, position)
        frames.append(image)
        depths.append(depth)
        ids.append(surface)
    logger.info("Rendered %d synthetic frames (%dx%d, step %.3f m)", num_frames, width, height, motion)
    return SyntheticScene(frames=frames, depths=depths, surface_ids=ids, camera=camera,
                          positions=positions, planes=planes)


def save_scene(scene, out_dir):
    """
    Write a scene as a dataset directory: ``frames/*.pfm`` (lossless),
    ``previews/*.png``, ``depth/*.pfm``, ``intrinsics.txt`` and ``poses.csv``.
    """
    for sub in ("frames", "previews", "depth"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    for k, (frame, depth) in enumerate(zip(scene.frames, scene.depths)):
        write_pfm(os.path.join(out_dir, "frames", f"frame_{k:05d}.pfm"), frame)
        write_image(os.path.join(out_dir, "previews", f"frame_{k:05d}.png"), frame)
        write_pfm(os.path.join(out_dir, "depth", f"depth_{k:05d}.pfm"), depth)
    cam = scene.camera
    with open(os.path.join(out_dir, "intrinsics.txt"), "w", encoding="utf-8") as handle:
        handle.write("# fx fy cx cy\n")
        handle.write(f"{cam.fx!r} {cam.fy!r} {cam.cx!r} {cam.cy!r}\n")
    poses = pd.DataFrame(scene.positions, columns=["cam_x", "cam_y", "cam_z"])
    poses.insert(0, "frame", range(len(scene)))
    poses.to_csv(os.path.join(out_dir, "poses.csv"), index=False)
    logger.info("Saved %d frames to %s", len(scene), out_dir)
