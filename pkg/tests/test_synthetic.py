import os

import numpy as np
import pandas as pd
import pytest

from utils.data_processor import load_dataset_dir
from utils.synthetic import DEFAULT_STEP, make_scene, save_scene


@pytest.fixture(scope="module")
def scene():
    return make_scene(num_frames=6, width=64, height=64, seed=0)


def test_scene_shapes_and_camera(scene):
    assert len(scene) == 6
    assert all(frame.shape == (64, 64, 3) for frame in scene.frames)
    assert all(depth.shape == (64, 64) for depth in scene.depths)
    assert scene.camera.fx == 64.0 and scene.camera.cx == 31.5
    assert len(scene.planes) == 3


def test_fronto_planes_move_whole_pixels(scene):
    # depths f * step / s for shifts of 1, 2 and 4 pixels
    levels = np.unique(np.concatenate([d.ravel() for d in scene.depths]))
    np.testing.assert_allclose(levels, sorted(64 * DEFAULT_STEP / s for s in (1, 2, 4)))


def test_frames_stay_in_unit_range(scene):
    for frame in scene.frames:
        assert frame.min() >= 0.0 and frame.max() <= 1.0


def test_relative_pose_is_pure_translation(scene):
    pose = scene.relative_pose(2, 3)
    np.testing.assert_allclose(pose[:3, :3], np.eye(3))
    np.testing.assert_allclose(pose[:3, 3], [-DEFAULT_STEP, 0.0, 0.0])
    previous, following = scene.triplet_poses(2)
    np.testing.assert_allclose(previous[:3, 3], [DEFAULT_STEP, 0.0, 0.0])
    np.testing.assert_allclose(following, pose)


def test_consistency_mask_covers_most_of_the_wall(scene):
    mask = scene.consistency_mask(2, 3)
    assert mask.dtype == bool
    assert 0.5 < mask.mean() < 1.0


def test_static_scene_is_fully_consistent():
    static = make_scene(num_frames=3, width=32, height=32, static=True)
    np.testing.assert_array_equal(static.frames[0], static.frames[2])
    assert static.consistency_mask(1, 0).all()


def test_same_seed_same_scene():
    first = make_scene(num_frames=3, width=32, height=32, seed=9)
    second = make_scene(num_frames=3, width=32, height=32, seed=9)
    other = make_scene(num_frames=3, width=32, height=32, seed=10)
    np.testing.assert_array_equal(first.frames[1], second.frames[1])
    assert not np.array_equal(first.frames[1], other.frames[1])


def test_optional_surfaces():
    scene = make_scene(num_frames=3, width=32, height=32, slanted=True, low_texture=True)
    assert len(scene.planes) == 5
    assert set(np.unique(scene.surface_ids[1])) >= {0, 3}


def test_scene_needs_three_frames():
    with pytest.raises(ValueError):
        make_scene(num_frames=2)


def test_triplets_cover_interior_frames(scene):
    triplets = scene.triplets()
    assert len(triplets) == 4
    np.testing.assert_array_equal(triplets[0].target, scene.frames[1])
    np.testing.assert_array_equal(triplets[0].depth, scene.depths[1])


def test_saved_scene_loads_back_losslessly(scene, tmp_path):
    save_scene(scene, str(tmp_path))
    assert sorted(os.listdir(tmp_path)) == ["depth", "frames", "intrinsics.txt", "poses.csv", "previews"]
    records = load_dataset_dir(str(tmp_path))
    assert len(records) == 4
    assert records[0].camera == scene.camera
    np.testing.assert_allclose(records[1].target, scene.frames[2], atol=1e-6)
    np.testing.assert_allclose(records[1].depth, scene.depths[2], rtol=1e-6)
    poses = pd.read_csv(tmp_path / "poses.csv")
    np.testing.assert_allclose(poses["cam_x"], scene.positions[:, 0])
