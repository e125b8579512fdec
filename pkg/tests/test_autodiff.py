"""Tests for the tensor type, the tape and backward."""

import numpy as np
import pytest

from factorizephys import ops
from factorizephys.autodiff import Tape, Tensor, backward, gradcheck, no_grad
from factorizephys.errors import AutogradError, NonFiniteError, ShapeError


def test_tensor_defaults_to_float32():
    """Test that tensors are 32-bit unless asked otherwise."""
    t = Tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float32
    assert t.shape == (2, 2)
    assert t.size == 4
    assert t.grad is None
    assert not t.requires_grad


def test_tensor_float64_selectable():
    """Test the 64-bit option."""
    t = Tensor([1.0, 2.0], dtype=np.float64)
    assert t.dtype == np.float64


def test_tensor_data_is_read_only():
    """Test that tensor data cannot be mutated in place."""
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_tensor_copies_input():
    """Test that later changes to the source array do not leak in."""
    src = np.ones(3, dtype=np.float32)
    t = Tensor(src)
    src[0] = 7.0
    assert t.data[0] == 1.0


def test_tensor_rejects_non_finite():
    """Test that NaN input is rejected at construction."""
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])


def test_item_requires_single_element():
    """Test item() on scalar and non-scalar tensors."""
    assert Tensor(3.5).item() == 3.5
    with pytest.raises(ShapeError):
        Tensor([1.0, 2.0]).item()


def test_backward_sum_gives_ones():
    """Test grad of sum(x) is all ones."""
    x = Tensor(np.arange(6).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(x)
    leaves = backward(tape, loss)
    assert leaves == [x]
    np.testing.assert_array_equal(x.grad, np.ones((2, 3), dtype=np.float32))


def test_backward_square_gives_two_x():
    """Test grad of sum(x*x) is 2x."""
    x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(ops.mul(x, x))
        tape.backward(loss)
    np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0])


def test_backward_accumulates_across_tapes():
    """Test that a second tape adds onto an existing gradient."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    for _ in range(2):
        with Tape() as tape:
            tape.backward(ops.reduce_sum(ops.mul(x, 3.0)))
    np.testing.assert_allclose(x.grad, [6.0, 6.0])


def test_backward_twice_without_reset_fails():
    """Test that a consumed tape refuses a second backward."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        loss = ops.reduce_sum(x)
    tape.backward(loss)
    with pytest.raises(AutogradError):
        tape.backward(loss)


def test_reset_allows_reuse():
    """Test that reset clears the tape for a new pass."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    tape = Tape()
    with tape:
        tape.backward(ops.reduce_sum(x))
    tape.reset()
    assert tape.nodes == []
    with tape:
        tape.backward(ops.reduce_sum(x))
    np.testing.assert_allclose(x.grad, [2.0, 2.0])


def test_non_scalar_loss_fails():
    """Test that backward needs a scalar."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        y = ops.mul(x, 2.0)
    with pytest.raises(AutogradError, match="scalar"):
        tape.backward(y)


def test_detached_loss_fails():
    """Test that a loss computed off the tape is rejected."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    loss = ops.reduce_sum(x)
    with pytest.raises(AutogradError, match="not on this tape"):
        Tape().backward(loss)


def test_no_grad_blocks_recording():
    """Test that ops inside no_grad are not recorded."""
    x = Tensor([1.0, 2.0], requires_grad=True)
    with Tape() as tape:
        with no_grad():
            y = ops.mul(x, x)
        assert not y.requires_grad
    assert tape.nodes == []


def test_tape_nodes_are_topological():
    """Test that every node's parents were produced earlier or are leaves."""
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3)), requires_grad=True)
    with Tape() as tape:
        y = ops.tanh(x)
        z = ops.mul(y, y)
        ops.reduce_mean(z)
    produced = set()
    for node in tape.nodes:
        for pid in node.parent_ids:
            assert pid in produced or pid == id(x)
        produced.add(id(node.output))


def test_grad_shape_matches_data():
    """Test the gradient has the shape of its tensor."""
    x = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    with Tape() as tape:
        tape.backward(ops.reduce_mean(ops.tanh(x)))
    assert x.grad.shape == x.shape


def test_gradcheck_on_polynomial():
    """Test the gradient checker on a function with known derivative."""
    x = Tensor(np.linspace(-1, 1, 5))
    err = gradcheck(lambda a: ops.reduce_sum(ops.mul(ops.mul(a, a), a)), [x])
    assert err < 1e-6


def test_gradcheck_sampling_is_seeded():
    """Test that sampled entries give a stable error."""
    x = Tensor(np.random.default_rng(1).normal(size=(4, 4)))
    fn = lambda a: ops.reduce_sum(ops.tanh(a))  # noqa: E731
    assert gradcheck(fn, [x], samples=5, seed=3) == gradcheck(fn, [x], samples=5, seed=3)
