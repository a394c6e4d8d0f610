import numpy as np
import pytest

from utils import tensor_core as tc
from utils.errors import ShapeError
from utils.gradcheck import COMPOSITE_TOLERANCE, check_gradients
from utils.md_block import init_md_block, md_block_forward
from tests.helpers import leaf


def test_zero_output_projection_is_identity(float64, rng):
    block = init_md_block(4, rng, state_dim=4)
    block.out_linear.data[:] = 0.0
    x = tc.Tensor(rng.standard_normal((4, 4, 4)))
    with tc.no_grad():
        out = md_block_forward(x, block).data
    np.testing.assert_array_equal(out, x.data)


def test_closed_gate_is_identity(float64, rng):
    block = init_md_block(4, rng, state_dim=4)
    block.gate_linear.data[:] = 0.0
    x = tc.Tensor(rng.standard_normal((3, 5, 4)))
    with tc.no_grad():
        out = md_block_forward(x, block).data
    np.testing.assert_array_equal(out, x.data)


def test_block_keeps_shape_and_changes_values(float64, rng):
    block = init_md_block(6, rng, state_dim=4, expand=2)
    x = tc.Tensor(rng.standard_normal((4, 8, 6)))
    with tc.no_grad():
        out = md_block_forward(x, block)
    assert out.shape == (4, 8, 6)
    assert not np.allclose(out.data, x.data)
    assert block.dwconv.shape == (3, 3, 12)
    assert len(block.ss2d) == 4


def test_block_rejects_wrong_channel_count(float64, rng):
    block = init_md_block(4, rng, state_dim=2)
    with pytest.raises(ShapeError):
        md_block_forward(tc.Tensor(np.zeros((4, 4, 5))), block)


def test_block_executors_agree(float64, rng):
    block = init_md_block(4, rng, state_dim=4)
    x = tc.Tensor(rng.standard_normal((4, 4, 4)))
    with tc.no_grad():
        sequential = md_block_forward(x, block, executor="sequential").data
        parallel = md_block_forward(x, block, executor="parallel").data
    np.testing.assert_allclose(parallel, sequential, rtol=0, atol=1e-10)


def test_block_gradients(float64, rng):
    block = init_md_block(4, rng, state_dim=2)
    x = leaf(rng, 3, 3, 4)
    weights = rng.standard_normal((3, 3, 4))
    inputs = [x] + list(tc.named_parameters(block).values())
    error = check_gradients(lambda: tc.sum_(tc.mul(md_block_forward(x, block), weights)),
                            inputs, probes=80, rng=rng)
    assert error < COMPOSITE_TOLERANCE
