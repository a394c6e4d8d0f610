import math

import numpy as np
import pytest

from utils import tensor_core as tc
from utils.errors import NonFiniteError, ShapeError
from utils.gradcheck import (COMPOSITE_TOLERANCE, check_gradients, random_scan_case,
                             scan_equivalence)
from utils.ssm_scan import (combine, init_ssm_params, recurrence_parallel,
                            recurrence_sequential, scan_parallel, scan_sequential,
                            selective_scan, state_matrix, step_sizes, zoh_discretize)
from tests.helpers import leaf


def _scan_args(length, channels, state_dim, rng):
    return (rng.uniform(0.0, 1.0, size=(length, channels, state_dim)),
            rng.standard_normal((length, channels, state_dim)))


@pytest.mark.parametrize("length", [1, 2, 63, 64, 65, 128, 200])
def test_parallel_recurrence_matches_loop(length, rng):
    a, b = _scan_args(length, 3, 4, rng)
    np.testing.assert_allclose(recurrence_parallel(a, b), recurrence_sequential(a, b),
                               rtol=0, atol=1e-12)


def test_parallel_recurrence_with_small_blocks(rng):
    a, b = _scan_args(37, 2, 2, rng)
    np.testing.assert_allclose(recurrence_parallel(a, b, block_size=4), recurrence_sequential(a, b),
                               rtol=0, atol=1e-12)


def test_executors_agree_over_many_random_scans():
    worst = max(scan_equivalence(cases=10, seed=seed) for seed in range(100))
    assert worst < 1e-10


def test_parallel_executor_is_deterministic(rng):
    args = random_scan_case(rng)
    with tc.default_dtype(np.float64), tc.no_grad():
        first = selective_scan(*args, executor="parallel").data
        second = selective_scan(*args, executor="parallel").data
    np.testing.assert_array_equal(first, second)


def test_combine_is_associative(rng):
    steps = [(rng.uniform(0, 1, 5), rng.standard_normal(5)) for _ in range(3)]
    left = combine(combine(steps[0], steps[1]), steps[2])
    right = combine(steps[0], combine(steps[1], steps[2]))
    for x, y in zip(left, right):
        np.testing.assert_allclose(x, y, rtol=1e-12)


def test_zero_step_keeps_state_and_blocks_input(float64):
    delta = np.zeros((1, 1))
    a_bar, b_bar = zoh_discretize(delta, np.array([[-1.0]]), np.array([[1.0]]))
    assert a_bar.data.item() == 1.0
    assert b_bar.data.item() == 0.0


def test_step_of_ln2_halves_the_state(float64):
    a_bar, b_bar = zoh_discretize(np.array([[math.log(2.0)]]), np.array([[-1.0]]), np.array([[1.0]]))
    assert a_bar.data.item() == pytest.approx(0.5, abs=1e-15)
    assert b_bar.data.item() == pytest.approx(math.log(2.0))


def test_discretised_decay_stays_inside_unit_interval(float64, rng):
    params = init_ssm_params(6, 16, rng)
    u = tc.Tensor(rng.standard_normal((40, 6)))
    a_bar, _ = zoh_discretize(step_sizes(params, u), state_matrix(params), tc.Tensor(np.ones((40, 16))))
    assert np.all(step_sizes(params, u).data > 0)
    assert np.all((a_bar.data > 0) & (a_bar.data < 1))


def test_discretize_rejects_non_finite_step(float64):
    with pytest.raises(NonFiniteError) as info:
        zoh_discretize(np.array([[np.nan]]), np.array([[-1.0]]), np.array([[1.0]]))
    assert info.value.name == "delta"


@pytest.mark.parametrize("executor", ["sequential", "parallel"])
def test_memoryless_scan_passes_input_through(executor, float64):
    u = np.array([[1.0], [2.0], [3.0]])
    ones = np.ones((3, 1, 1))
    y = selective_scan(np.zeros((3, 1, 1)), ones, np.ones((3, 1)), u, np.zeros(1), executor=executor)
    np.testing.assert_array_equal(y.data, u)


@pytest.mark.parametrize("executor", ["sequential", "parallel"])
def test_unit_decay_scan_is_a_running_sum(executor, float64):
    ones = np.ones((3, 1, 1))
    y = selective_scan(ones, ones, np.ones((3, 1)), np.ones((3, 1)), np.zeros(1), executor=executor)
    np.testing.assert_array_equal(y.data[:, 0], [1.0, 2.0, 3.0])


def test_skip_only_scan_scales_input(float64):
    y = selective_scan(np.zeros((2, 1, 1)), np.zeros((2, 1, 1)), np.ones((2, 1)),
                       np.array([[1.0], [4.0]]), np.array([2.0]))
    np.testing.assert_array_equal(y.data[:, 0], [2.0, 8.0])


def test_sequential_scan_exposes_hidden_states(float64, rng):
    a, b = _scan_args(5, 2, 3, rng)
    u = np.ones((5, 2))
    _, states = selective_scan(a, b, np.ones((5, 3)), u, np.zeros(2),
                               executor="sequential", return_states=True)
    np.testing.assert_allclose(states.data, recurrence_sequential(a, b))
    with pytest.raises(ValueError):
        selective_scan(a, b, np.ones((5, 3)), u, np.zeros(2), executor="parallel", return_states=True)


def test_selective_scan_checks_shapes(float64, rng):
    a, b = _scan_args(4, 2, 3, rng)
    with pytest.raises(ShapeError):
        selective_scan(a, b, np.ones((4, 2)), np.ones((4, 2)), np.zeros(2))


def test_long_sequences_stay_bounded(float64, rng):
    params = init_ssm_params(2, 4, rng)
    u = tc.Tensor(rng.uniform(-1, 1, size=(10_000, 2)))
    with tc.no_grad():
        y = scan_parallel(params, u).data
    assert np.all(np.isfinite(y))
    assert np.max(np.abs(y)) < 1e3


def test_full_scan_executors_agree(float64, rng):
    params = init_ssm_params(4, 8, rng)
    u = tc.Tensor(rng.standard_normal((150, 4)))
    with tc.no_grad():
        np.testing.assert_allclose(scan_parallel(params, u).data, scan_sequential(params, u).data,
                                   rtol=0, atol=1e-10)


def test_initial_state_matrix_counts_down(float64, rng):
    params = init_ssm_params(3, 4, rng)
    np.testing.assert_allclose(state_matrix(params).data, -np.tile([1.0, 2.0, 3.0, 4.0], (3, 1)))
    np.testing.assert_array_equal(params.D.data, np.ones(3))


@pytest.mark.parametrize("executor", ["sequential", "parallel"])
def test_scan_gradients(executor, float64, rng):
    params = init_ssm_params(2, 3, rng)
    u = leaf(rng, 9, 2)
    weights = rng.standard_normal((9, 2))
    inputs = [u] + list(tc.named_parameters(params).values())

    def fn():
        y = scan_sequential(params, u) if executor == "sequential" else scan_parallel(params, u)
        return tc.sum_(tc.mul(y, weights))

    assert check_gradients(fn, inputs, probes=60, rng=rng) < COMPOSITE_TOLERANCE
