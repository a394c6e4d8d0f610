import numpy as np
import pytest
from scipy.ndimage import binary_erosion

from utils import tensor_core as tc
from utils.config import LossConfig
from utils.gradcheck import LOSS_TOLERANCE, check_gradients, desk_loss_case
from utils.losses import (area_downsample, auto_mask, photometric_error, photometric_term,
                          smoothness_loss, ssim, total_loss)
from utils.mambadepth_net import DepthOutputs
from utils.synthetic import make_scene
from utils.view_synthesis import reconstruct
from tests.helpers import tiny_camera


@pytest.fixture(scope="module")
def moving_scene():
    return make_scene(num_frames=5, width=64, height=64, seed=3)


def test_ssim_of_identical_images_is_one(float64, rng):
    image = rng.uniform(0, 1, size=(9, 11, 3))
    np.testing.assert_allclose(ssim(image, image).data, 1.0, atol=1e-12)


def test_ssim_drops_for_different_images(float64, rng):
    a = rng.uniform(0, 1, size=(9, 9, 3))
    b = rng.uniform(0, 1, size=(9, 9, 3))
    assert ssim(a, b).data.mean() < 0.5


def test_photometric_error_of_identical_images_is_zero(float64, rng):
    image = rng.uniform(0, 1, size=(8, 8, 3))
    np.testing.assert_allclose(photometric_error(image, image).data, 0.0, atol=1e-12)


def test_pure_l1_error(float64):
    cfg = LossConfig(alpha=0.0)
    error = photometric_error(np.full((4, 4, 3), 0.5), np.full((4, 4, 3), 0.4), cfg).data
    np.testing.assert_allclose(error, 0.1)


def test_smoothness_of_constant_disparity_is_zero(float64, rng):
    loss = smoothness_loss(np.full((6, 6), 0.3), rng.uniform(size=(6, 6, 3)))
    assert loss.item() == pytest.approx(0.0, abs=1e-15)


def test_smoothness_is_scale_invariant(float64, rng):
    disp = rng.uniform(0.1, 0.9, size=(6, 6))
    image = rng.uniform(size=(6, 6, 3))
    a = smoothness_loss(disp, image).item()
    b = smoothness_loss(disp * 3.0, image).item()
    assert a == pytest.approx(b, rel=1e-6)


def test_image_edges_discount_smoothness(float64, rng):
    disp = rng.uniform(0.1, 0.9, size=(6, 6))
    flat = smoothness_loss(disp, np.zeros((6, 6, 3))).item()
    edged = smoothness_loss(disp, rng.uniform(size=(6, 6, 3))).item()
    assert edged < flat


def test_static_camera_masks_out_everything(float64):
    scene = make_scene(num_frames=3, width=32, height=32, seed=1, static=True)
    target = scene.frames[1]
    # any depth guess works when the camera does not move
    guess = np.full((32, 32), 2.0)
    warped = [reconstruct(scene.frames[s], guess, scene.relative_pose(1, s), scene.camera)[0].data
              for s in (0, 2)]
    mask = auto_mask(target, warped, [scene.frames[0], scene.frames[2]])
    assert (mask == 0).mean() >= 0.99


def test_true_geometry_reconstructs_visible_pixels(float64, moving_scene):
    scene, target = moving_scene, 2
    errors = []
    consistent = np.zeros((64, 64), dtype=bool)
    for source in (1, 3):
        warped, _ = reconstruct(scene.frames[source], scene.depths[target],
                                scene.relative_pose(target, source), scene.camera)
        errors.append(photometric_error(scene.frames[target], warped).data)
        consistent |= binary_erosion(scene.consistency_mask(target, source), structure=np.ones((3, 3)))
    best = np.minimum(*errors)
    assert consistent.mean() > 0.5
    assert best[consistent].max() < 1e-6


def test_moving_scene_keeps_most_pixels(float64, moving_scene):
    scene, target = moving_scene, 2
    sources = [scene.frames[1], scene.frames[3]]
    loss, mask, valid = photometric_term(scene.frames[target], sources, scene.depths[target],
                                         scene.triplet_poses(target), scene.camera)
    assert mask.mean() > 0.6
    assert valid.mean() > 0.9
    assert loss.item() < 1e-2


def test_wrong_depth_costs_more_than_true_depth(float64, moving_scene):
    scene, target = moving_scene, 2
    sources = [scene.frames[1], scene.frames[3]]
    poses = scene.triplet_poses(target)
    true_loss, _, _ = photometric_term(scene.frames[target], sources, scene.depths[target], poses, scene.camera)
    wrong_loss, _, _ = photometric_term(scene.frames[target], sources, scene.depths[target] * 2.0, poses,
                                        scene.camera)
    assert wrong_loss.item() > true_loss.item()


def test_photometric_term_needs_one_pose_per_source(float64, moving_scene):
    scene = moving_scene
    with pytest.raises(ValueError):
        photometric_term(scene.frames[2], [scene.frames[1]], scene.depths[2], scene.triplet_poses(2),
                         scene.camera)


def test_area_downsample_averages_blocks(float64, rng):
    image = rng.uniform(size=(8, 8, 3))
    out = area_downsample(image, 4, 4).data
    np.testing.assert_allclose(out[0, 0], image[:2, :2].mean(axis=(0, 1)))


def test_total_loss_reports_parts(float64, rng):
    size = 8
    target = rng.uniform(0.1, 0.9, size=(size, size, 3))
    sources = [rng.uniform(0.1, 0.9, size=(size, size, 3)) for _ in range(2)]
    fine = tc.Tensor(rng.uniform(0.2, 0.8, size=(size, size)))
    coarse = tc.Tensor(rng.uniform(0.2, 0.8, size=(size // 2, size // 2)))
    outputs = DepthOutputs(disparities=[fine, coarse], depths=[],
                           upsampled_disparities=[fine, tc.Tensor(np.kron(coarse.data, np.ones((2, 2))))])
    terms = total_loss(target, sources, outputs, [np.eye(4), np.eye(4)], tiny_camera(size))
    assert np.isfinite(terms.total.item())
    assert 0.0 <= terms.mask_coverage <= 1.0
    assert terms.smoothness > 0


def test_total_loss_gradient(float64):
    name, fn, inputs, tolerance = desk_loss_case(np.random.default_rng(5))
    assert name == "total_loss"
    assert check_gradients(fn, inputs, probes=50, rng=np.random.default_rng(6)) < tolerance
    assert tolerance == LOSS_TOLERANCE


def _naive_ssim(a, b, window=3, c1=0.01 ** 2, c2=0.03 ** 2):
    half = window // 2
    pa = np.pad(a, ((half, half), (half, half), (0, 0)), mode="reflect")
    pb = np.pad(b, ((half, half), (half, half), (0, 0)), mode="reflect")
    out = np.zeros(a.shape)
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            for c in range(a.shape[2]):
                wa = pa[i:i + window, j:j + window, c]
                wb = pb[i:i + window, j:j + window, c]
                mu_a, mu_b = wa.mean(), wb.mean()
                var_a = ((wa - mu_a) ** 2).mean()
                var_b = ((wb - mu_b) ** 2).mean()
                cov = ((wa - mu_a) * (wb - mu_b)).mean()
                out[i, j, c] = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
                                / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))
    return out


def test_ssim_matches_windowed_loop(float64, rng):
    a = rng.uniform(size=(6, 7, 3))
    b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
    np.testing.assert_allclose(ssim(a, b).data, _naive_ssim(a, b), atol=1e-10)


def test_auto_mask_matches_per_pixel_comparison(float64, rng):
    target = rng.uniform(size=(6, 6, 3))
    warped = [np.clip(target + rng.normal(0, s, size=target.shape), 0, 1) for s in (0.05, 0.3)]
    raw = [rng.uniform(size=(6, 6, 3)) for _ in range(2)]
    raw[0][:3] = target[:3]
    mask = auto_mask(target, warped, raw)

    warped_pe = [photometric_error(target, w).data for w in warped]
    raw_pe = [photometric_error(target, r).data for r in raw]
    expected = np.zeros((6, 6))
    for i in range(6):
        for j in range(6):
            best_warped = min(e[i, j] for e in warped_pe)
            best_raw = min(e[i, j] for e in raw_pe)
            expected[i, j] = 1.0 if best_warped < best_raw else 0.0
    np.testing.assert_array_equal(mask, expected)
    assert expected[:2].sum() == 0 and expected[3:].sum() > 0


def test_auto_mask_is_binary_and_repeatable(float64, moving_scene):
    scene, target = moving_scene, 2
    warped = [reconstruct(scene.frames[s], scene.depths[target], scene.relative_pose(target, s),
                          scene.camera)[0].data for s in (1, 3)]
    raw = [scene.frames[1], scene.frames[3]]
    mask = auto_mask(scene.frames[target], warped, raw)
    assert set(np.unique(mask)) <= {0.0, 1.0}
    np.testing.assert_array_equal(mask * mask, mask)
    np.testing.assert_array_equal(auto_mask(scene.frames[target], warped, raw), mask)


def test_total_loss_grows_with_smoothness_weight(float64, rng):
    size = 8
    target = rng.uniform(0.1, 0.9, size=(size, size, 3))
    sources = [rng.uniform(0.1, 0.9, size=(size, size, 3)) for _ in range(2)]
    disp = tc.Tensor(rng.uniform(0.2, 0.8, size=(size, size)))
    outputs = DepthOutputs(disparities=[disp], depths=[], upsampled_disparities=[disp])
    totals = []
    photometric = []
    for weight in (0.0, 1e-3, 1e-1, 1.0):
        terms = total_loss(target, sources, outputs, [np.eye(4), np.eye(4)], tiny_camera(size),
                           LossConfig(smoothness_weight=weight))
        totals.append(terms.total.item())
        photometric.append(terms.photometric)
    assert totals == sorted(totals) and totals[-1] > totals[0]
    assert photometric == pytest.approx([photometric[0]] * 4)
