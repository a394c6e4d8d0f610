import os
from dataclasses import replace

import numpy as np
import pytest

from utils import tensor_core as tc
from utils.config import ExperimentConfig, NetConfig, TrainConfig
from utils.errors import DataError, NonFiniteError
from utils.file_formats import load_checkpoint
from utils.mambadepth_net import disp_to_depth, init_model, predict_disparity, state_dict
from utils.metrics_eval import median_scale
from utils.run_registry import get_run
from utils.synthetic import make_scene
from utils.trainer import (FINAL_CHECKPOINT, LOSS_CSV, AdamState, AugmentDraw, adam_step,
                           apply_augmentation, augment, color_jitter, draw_augmentation,
                           flip_frames, learning_rate, run_training, train_step)
from tests.helpers import tiny_camera


def tiny_experiment(epochs=1, seed=0, **train):
    model = NetConfig.desk(base_channels=4, state_dim=2, pose_channels=(8, 8, 8, 8, 8))
    return ExperimentConfig(model=model, train=TrainConfig(epochs=epochs, seed=seed, batch_size=1, **train))


@pytest.fixture(scope="module")
def tiny_dataset():
    return make_scene(num_frames=4, width=32, height=32, seed=2).triplets()


def test_first_adam_step_moves_by_learning_rate():
    params = {"w": tc.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)}
    grads = {"w": np.array([0.5, -4.0, 0.0])}
    state = AdamState()
    adam_step(params, grads, state, lr=0.1)
    np.testing.assert_allclose(params["w"].data, [0.9, -1.9, 3.0], atol=1e-6)
    assert state.step == 1


def test_adam_moments_follow_betas():
    params = {"w": np.zeros(2)}
    state = AdamState()
    adam_step(params, {"w": np.array([1.0, 2.0])}, state, lr=0.01, beta1=0.5, beta2=0.75)
    adam_step(params, {"w": np.array([1.0, 2.0])}, state, lr=0.01, beta1=0.5, beta2=0.75)
    np.testing.assert_allclose(state.m["w"], [0.75, 1.5])
    np.testing.assert_allclose(state.v["w"], [0.4375, 1.75])


def test_non_finite_gradient_names_parameter_and_updates_nothing():
    params = {"good": np.ones(2), "bad": np.ones(2)}
    state = AdamState()
    with pytest.raises(NonFiniteError) as info:
        adam_step(params, {"good": np.ones(2), "bad": np.array([1.0, np.nan])}, state, lr=0.1)
    assert info.value.name == "bad"
    assert "bad" in str(info.value)
    np.testing.assert_array_equal(params["good"], np.ones(2))
    assert state.step == 0


def test_learning_rate_drops_once():
    cfg = TrainConfig()
    assert [learning_rate(e, cfg) for e in (0, 14, 15, 19)] == [1e-4, 1e-4, 1e-5, 1e-5]


def test_augmentation_is_reproducible(rng):
    frames = tuple(rng.uniform(size=(8, 8, 3)) for _ in range(3))
    first = augment(frames, seed=11)
    second = augment(frames, seed=11)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_draw_uses_configured_ranges():
    cfg = TrainConfig()
    draws = [draw_augmentation(np.random.default_rng(s), cfg) for s in range(50)]
    assert any(d.flip for d in draws) and not all(d.flip for d in draws)
    assert all(0.8 <= d.brightness <= 1.2 and abs(d.hue) <= 0.05 for d in draws)


def test_color_jitter_shares_factors_and_stays_in_range(rng):
    frame = rng.uniform(size=(6, 6, 3))
    draw = AugmentDraw(jitter=True, brightness=1.2, contrast=0.8, saturation=1.1, hue=0.03)
    out = color_jitter((frame, frame, frame), draw)
    np.testing.assert_allclose(out[0], out[2])
    assert all(o.min() >= 0.0 and o.max() <= 1.0 for o in out)
    assert not np.allclose(out[1], frame)


def test_flip_mirrors_frames_and_camera(rng):
    frames = tuple(rng.uniform(size=(8, 8, 3)) for _ in range(3))
    np.testing.assert_array_equal(flip_frames(frames)[1], frames[1][:, ::-1])
    cam = tiny_camera()
    sample = apply_augmentation(frames, cam, AugmentDraw(flip=True, jitter=True, brightness=1.1))
    assert sample.camera == cam.flipped()
    np.testing.assert_array_equal(sample.loss_frames[0], frames[0][:, ::-1])
    assert not np.array_equal(sample.inputs[0], sample.loss_frames[0])


def test_zero_epochs_writes_initial_weights(tmp_path, tiny_dataset):
    experiment = tiny_experiment(epochs=0, seed=4)
    _, result = run_training(experiment, str(tmp_path), tiny_dataset)
    assert result.checkpoint == os.path.join(str(tmp_path), FINAL_CHECKPOINT)
    assert result.curve.empty
    tensors, _ = load_checkpoint(result.checkpoint)
    expected = state_dict(init_model(experiment.model, np.random.default_rng(4), dtype=np.float32))
    assert sorted(tensors) == sorted(expected)
    for name, value in expected.items():
        np.testing.assert_array_equal(tensors[name], value, err_msg=name)


def test_training_outputs_and_registry(tmp_path, tiny_dataset):
    seen = []
    _, result = run_training(tiny_experiment(epochs=1), str(tmp_path), tiny_dataset,
                             on_epoch=lambda epoch, means: seen.append(epoch), run_id="smoke")
    assert seen == [0]
    assert len(result.curve) == len(tiny_dataset)
    assert np.isfinite(result.curve["loss_total"]).all()
    assert os.path.exists(os.path.join(str(tmp_path), "epoch_000.ckpt"))
    assert os.path.exists(os.path.join(str(tmp_path), LOSS_CSV))
    entry = get_run(str(tmp_path), "smoke")
    assert entry["outputs"]["checkpoint"] == result.checkpoint
    assert entry["config"]["model"]["base_channels"] == 4


def test_same_seed_gives_identical_runs(tmp_path, tiny_dataset):
    results = []
    for name in ("a", "b"):
        _, result = run_training(tiny_experiment(epochs=1, seed=3), str(tmp_path / name), tiny_dataset)
        results.append(load_checkpoint(result.checkpoint)[0])
        results.append(result.curve["loss_total"].tolist())
    assert results[1] == results[3]
    for name, value in results[0].items():
        np.testing.assert_array_equal(results[2][name], value, err_msg=name)


def test_resume_continues_from_checkpoint(tmp_path, tiny_dataset):
    first = tiny_experiment(epochs=0, seed=1)
    _, start = run_training(first, str(tmp_path / "start"), tiny_dataset)
    model, _ = run_training(tiny_experiment(epochs=0, seed=99), str(tmp_path / "resumed"), tiny_dataset,
                            resume=start.checkpoint)
    resumed = state_dict(model)
    for name, value in load_checkpoint(start.checkpoint)[0].items():
        np.testing.assert_array_equal(resumed[name], value)


def test_batch_larger_than_dataset_is_a_data_error(tmp_path, tiny_dataset):
    experiment = tiny_experiment()
    experiment = replace(experiment, train=replace(experiment.train, batch_size=len(tiny_dataset) + 1))
    with pytest.raises(DataError):
        run_training(experiment, str(tmp_path), tiny_dataset)


def test_training_leaves_the_default_dtype_alone(tmp_path, tiny_dataset):
    with tc.default_dtype(np.float64):
        model, _ = run_training(tiny_experiment(epochs=1), str(tmp_path), tiny_dataset)
        assert tc.get_default_dtype() == np.float64
    assert all(p.dtype == np.float32 for p in tc.named_parameters(model).values())


def test_one_step_moves_both_networks(float64, tiny_dataset):
    experiment = tiny_experiment()
    model = init_model(experiment.model, np.random.default_rng(0))
    before = state_dict(model)
    record = tiny_dataset[0]
    sample = apply_augmentation(record.frames, record.camera, AugmentDraw())
    losses = train_step(model, [sample], experiment, AdamState(), 1e-3)
    assert np.isfinite(losses["loss_total"])

    after = state_dict(model)
    moved = {name for name in before if not np.array_equal(before[name], after[name])}
    assert any(name.startswith("depth.") for name in moved)
    assert any(name.startswith("pose.") for name in moved)
    assert "depth.embed_weight" in moved and "pose.head_weight" in moved


@pytest.mark.slow
def test_desk_network_fits_a_synthetic_scene(tmp_path):
    experiment = ExperimentConfig()
    assert (experiment.model.base_channels, experiment.data.width, experiment.data.height,
            experiment.data.synthetic_frames, experiment.train.epochs) == (8, 64, 64, 20, 20)
    experiment = replace(experiment, train=replace(experiment.train, lr_initial=1e-3, lr_after=1e-4))
    scene = make_scene(num_frames=20, width=64, height=64, seed=0)
    model, result = run_training(experiment, str(tmp_path), scene.triplets())

    photometric = result.epoch_losses["loss_photo"].tolist()
    assert len(photometric) == 20
    assert photometric[-1] <= 0.5 * photometric[0]

    net = experiment.model
    within = []
    for target in range(1, len(scene) - 1):
        consistent = scene.consistency_mask(target, target - 1) | scene.consistency_mask(target, target + 1)
        disp = predict_disparity(scene.frames[target], model.depth, net)
        with tc.no_grad():
            depth = disp_to_depth(tc.Tensor(disp, dtype=np.float64), net.min_depth, net.max_depth).data
        scaled, _ = median_scale(depth, scene.depths[target], consistent)
        # disparity error relative to the true disparity
        error = np.abs(scene.depths[target][consistent] / scaled[consistent] - 1.0)
        within.append(error <= 0.2)
    assert np.concatenate(within).mean() >= 0.9
