"""
SA3 - Tensor library tests
Primitive forward values, backward rules and the gradient tape contract
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import math

import numpy as np
import pytest

from core import ops
from core.tensor import GradTape, Tensor, backward
from core.parameters import ParameterStore, SGDMomentum, gradients_by_name
from standards.errors import InvalidArgumentError, EmptyBoxError
from gradcheck import assert_gradients_match


def _grad_of(fn, *arrays):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with GradTape():
        loss = fn(*leaves)
    grads = backward(loss)
    return [grads[leaf] for leaf in leaves]


# ---------------------------------------------------------------------------
# Forward values
# ---------------------------------------------------------------------------

def test_conv1d_examples():
    assert np.allclose(ops.conv1d([1, 2, 3], [0, 1, 0]).data, [1, 2, 3])
    assert np.allclose(ops.conv1d([1, 2, 3], [1, 1, 1]).data, [3, 6, 5])
    assert np.allclose(ops.conv1d([5], [2]).data, [10])


def test_conv1d_rejects_even_kernel():
    with pytest.raises(InvalidArgumentError):
        ops.conv1d([1, 2, 3, 4], [1, 1])


def test_conv1d_long_kernel_uses_central_taps():
    out = ops.conv1d([1.0, 2.0], [9.0, 0.0, 1.0, 0.0, 9.0])
    # largest odd length ≤ 2 is 1: only the centre tap survives
    assert np.array_equal(out.data, [1.0, 2.0])


def test_conv1d_center_kernel_is_identity():
    signal = np.random.default_rng(3).uniform(-2, 2, size=11)
    kernel = np.zeros(5)
    kernel[2] = 1.0
    assert np.array_equal(ops.conv1d(signal, kernel).data, signal)


def test_softmax_examples():
    assert np.allclose(ops.softmax_axis([[0.0, 0.0]], "row").data, [[0.5, 0.5]])
    assert np.allclose(ops.softmax_axis([[2.0, 0.0]], "row").data, [[0.880797, 0.119203]], atol=1e-6)
    assert np.allclose(ops.softmax_axis([[7.0, 7.0, 7.0]], "row").data, [[1 / 3] * 3])


def test_softmax_sums_and_shift_invariance():
    rng = np.random.default_rng(11)
    x = rng.uniform(-5, 5, size=(6, 4))
    rows = ops.softmax_axis(x, "row").data
    cols = ops.softmax_axis(x, "column").data
    assert np.all(np.abs(rows.sum(axis=1) - 1.0) <= 1e-9)
    assert np.all(np.abs(cols.sum(axis=0) - 1.0) <= 1e-9)
    shifted_rows = ops.softmax_axis(x + rng.uniform(-3, 3, size=(6, 1)), "row").data
    shifted_cols = ops.softmax_axis(x + rng.uniform(-3, 3, size=(1, 4)), "column").data
    assert np.max(np.abs(shifted_rows - rows)) <= 1e-12
    assert np.max(np.abs(shifted_cols - cols)) <= 1e-12


def test_softmax_rejects_unknown_axis():
    with pytest.raises(InvalidArgumentError):
        ops.softmax_axis([[1.0, 2.0]], "diagonal")


def test_sigmoid_examples_and_open_interval():
    assert ops.sigmoid(0.0).item() == 0.5
    assert ops.sigmoid(math.log(3)).item() == pytest.approx(0.75, abs=1e-15)
    assert ops.sigmoid(-math.log(3)).item() == pytest.approx(0.25, abs=1e-15)
    extreme = ops.sigmoid([-1000.0, -40.0, 40.0, 1000.0]).data
    assert np.all(extreme > 0.0) and np.all(extreme < 1.0)


def test_global_avg_pool_examples():
    assert np.allclose(ops.global_avg_pool(np.full((3, 5, 2), 4.2)).data, [4.2, 4.2])
    assert ops.global_avg_pool(np.array([1.0, 2.0, 3.0, 4.0]).reshape(2, 2, 1)).data[0] == 2.5


def test_global_avg_pool_is_exactly_permutation_invariant():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(6, 7, 3)) * 10.0 ** rng.integers(-8, 8, size=(6, 7, 3))
    flat = x.reshape(42, 3)
    permuted = flat[rng.permutation(42)].reshape(6, 7, 3)
    assert ops.global_avg_pool(x).data.tobytes() == ops.global_avg_pool(permuted).data.tobytes()


def test_gradient_reversal_forward_and_backward():
    x = Tensor([1.5, -2.0], requires_grad=True)
    upstream = np.array([0.3, -0.7])
    with GradTape():
        y = ops.gradient_reversal(x)
        loss = ops.sum(ops.mul(y, upstream))
    assert y.data.tobytes() == x.data.tobytes()
    grads = backward(loss)
    assert np.array_equal(grads[x], -upstream)


def test_gradient_reversal_chain_rule():
    (grad,) = _grad_of(lambda x: ops.power(ops.gradient_reversal(x), 2), np.array(2.0))
    assert grad == -4.0


def test_bce_examples():
    assert ops.bce_loss([0.5], [1]).item() == pytest.approx(math.log(2))
    assert ops.bce_loss([0.75], [1]).item() == pytest.approx(0.287682, abs=1e-6)
    perfect = ops.bce_loss([1.0, 0.0], [1, 0]).item()
    assert 0.0 <= perfect <= -math.log(1 - ops.BCE_EPS) + 1e-15


def test_bce_shape_mismatch():
    with pytest.raises(InvalidArgumentError):
        ops.bce_loss([0.5, 0.5], [1])


def test_smooth_l1_and_cross_entropy_values():
    assert ops.smooth_l1([0.5, 3.0], [0.0, 0.0]).item() == pytest.approx(0.125 + 2.5)
    assert ops.softmax_cross_entropy([[0.0, 0.0]], [1]).item() == pytest.approx(math.log(2))


def test_crop_resize_constant_feature():
    feature = np.full((4, 4, 3), 2.5)
    out = ops.crop_resize(feature, (3.0, 5.0, 40.0, 61.0), size=3, stride=16)
    assert out.shape == (3, 3, 3)
    assert np.allclose(out.data, 2.5)


def test_crop_resize_rejects_empty_box():
    with pytest.raises(EmptyBoxError):
        ops.crop_resize(np.ones((4, 4, 1)), (5.0, 5.0, 5.0, 9.0), size=2, stride=16)


def test_crop_resize_batch_matches_single_crops():
    rng = np.random.default_rng(2)
    feature = rng.normal(size=(4, 4, 2))
    boxes = np.array([[0.0, 0.0, 30.0, 20.0], [10.0, 12.0, 64.0, 64.0]])
    batch = ops.crop_resize_batch(feature, boxes, size=2, stride=16).data
    for n, box in enumerate(boxes):
        assert np.array_equal(batch[n], ops.crop_resize(feature, tuple(box), size=2, stride=16).data)


# ---------------------------------------------------------------------------
# Tape contract
# ---------------------------------------------------------------------------

def test_backward_examples():
    assert _grad_of(lambda x: ops.power(x, 2), np.array(3.0))[0] == 6.0
    assert _grad_of(ops.sigmoid, np.array(0.0))[0] == 0.25


def test_backward_rejects_non_scalar_loss():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape():
        y = ops.mul(x, 2.0)
    with pytest.raises(InvalidArgumentError):
        backward(y)


def test_backward_rejects_loss_without_tape():
    loss = ops.sum(Tensor([1.0, 2.0], requires_grad=True))
    with pytest.raises(InvalidArgumentError):
        backward(loss)


def test_tape_is_consumed_by_backward():
    x = Tensor(1.0, requires_grad=True)
    with GradTape() as tape:
        loss = ops.mul(x, x)
    backward(loss)
    assert tape.consumed
    with pytest.raises(InvalidArgumentError):
        backward(loss)


def test_tape_records_in_topological_order():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        y = ops.relu(x)
        ops.sum(ops.mul(y, y))
    seen = {x._id}
    for rec in tape.records:
        assert all(t._id in seen for t in rec.inputs if t.requires_grad)
        seen.add(rec.output._id)


def test_tensor_data_is_read_only():
    t = Tensor([1.0, 2.0])
    with pytest.raises(ValueError):
        t.data[0] = 5.0


def test_reused_input_accumulates_gradient():
    (grad,) = _grad_of(lambda x: ops.sum(ops.add(ops.mul(x, 3.0), ops.mul(x, x))), np.array([1.0, -2.0]))
    assert np.allclose(grad, [5.0, -1.0])


# ---------------------------------------------------------------------------
# Finite-difference agreement for every primitive
# ---------------------------------------------------------------------------

def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(-2, 2, size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


PRIMITIVE_CASES = {
    "add": (lambda a, b: ops.sum(ops.mul(ops.add(a, b), ops.add(a, b))), [(3, 2), (2,)]),
    "sub": (lambda a, b: ops.sum(ops.mul(ops.sub(a, b), a)), [(3, 2), (3, 2)]),
    "mul_channels": (lambda a, b: ops.sum(ops.mul(ops.mul(a, b), a)), [(2, 3, 4), (4,)]),
    "matmul": (lambda a, b: ops.sum(ops.power(ops.matmul(a, b), 2)), [(3, 4), (4, 2)]),
    "conv1d": (lambda s, k: ops.sum(ops.power(ops.conv1d(s, k), 2)), [(6,), (3,)]),
    "conv2d_s1": (lambda x, w, b: ops.sum(ops.power(ops.conv2d(x, w, b, stride=1, padding=1), 2)),
                  [(4, 4, 2), (3, 3, 2, 3), (3,)]),
    "conv2d_s2": (lambda x, w: ops.sum(ops.power(ops.conv2d(x, w, stride=2, padding=1), 2)),
                  [(5, 6, 2), (3, 3, 2, 2)]),
    "sigmoid": (lambda a: ops.sum(ops.mul(ops.sigmoid(a), a)), [(5,)]),
    "softmax_row": (lambda a, w: ops.sum(ops.mul(ops.softmax_axis(a, "row"), w)), [(3, 4), (3, 4)]),
    "softmax_column": (lambda a, w: ops.sum(ops.mul(ops.softmax_axis(a, "column"), w)), [(3, 4), (3, 4)]),
    "global_avg_pool": (lambda a: ops.sum(ops.power(ops.global_avg_pool(a), 2)), [(3, 2, 4)]),
    "mean_axis": (lambda a: ops.sum(ops.power(ops.mean(a, axis=0), 2)), [(4, 3)]),
    "reshape_take": (lambda a: ops.sum(ops.power(ops.take(ops.reshape(a, (6, 2)), [0, 3, 3], axis=0), 2)),
                     [(3, 4)]),
    "concat_stack": (lambda a, b: ops.sum(ops.power(ops.concat([a, ops.stack([b, b])], axis=0), 3)),
                     [(2, 3), (3,)]),
    "cross_entropy": (lambda a: ops.softmax_cross_entropy(a, [0, 2, 1]), [(3, 4)]),
    "crop_resize": (lambda f: ops.sum(ops.power(ops.crop_resize(f, (3.0, 7.0, 50.0, 41.0), 3, 16), 2)),
                    [(4, 4, 2)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
@pytest.mark.parametrize("seed", range(6))
def test_primitive_gradients_match_finite_differences(name, seed):
    fn, shapes = PRIMITIVE_CASES[name]
    rng = np.random.default_rng([seed, len(name)])
    arrays = [rng.uniform(-2, 2, size=shape) for shape in shapes]
    assert_gradients_match(fn, *arrays)


@pytest.mark.parametrize("seed", range(6))
def test_relu_gradients(seed):
    rng = np.random.default_rng(seed)
    x = _away_from_zero(rng, (4, 3))
    assert_gradients_match(lambda a: ops.sum(ops.mul(ops.relu(a), a)), x)


@pytest.mark.parametrize("seed", range(6))
def test_log_and_bce_gradients(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.1, 0.9, size=5)
    y = rng.integers(0, 2, size=5)
    assert_gradients_match(lambda a: ops.add(ops.bce_loss(a, y), ops.sum(ops.log(a))), p)


@pytest.mark.parametrize("seed", range(6))
def test_smooth_l1_gradients(seed):
    rng = np.random.default_rng(seed)
    target = rng.uniform(-2, 2, size=6)
    offsets = rng.choice([-1.7, -0.4, 0.3, 1.6], size=6)
    assert_gradients_match(lambda a: ops.smooth_l1(a, target), target + offsets)


# ---------------------------------------------------------------------------
# Parameters and optimizer
# ---------------------------------------------------------------------------

def test_parameter_initialisation_is_per_name():
    first = ParameterStore(seed=4)
    first.create("a.weight", (3, 2))
    first.create("b.weight", (2, 2))
    second = ParameterStore(seed=4)
    second.create("b.weight", (2, 2))
    assert np.array_equal(first.get("b.weight"), second.get("b.weight"))


def test_parameter_store_rejects_duplicates_and_bad_shapes():
    store = ParameterStore()
    store.create("w", (2,), init="constant", value=1.0)
    with pytest.raises(InvalidArgumentError):
        store.create("w", (2,))
    with pytest.raises(InvalidArgumentError):
        store.assign("w", np.zeros(3))


def test_sgd_momentum_update():
    store = ParameterStore()
    store.create("w", (2,), init="constant", value=1.0)
    store.create("unused", (1,), init="constant", value=3.0)
    optimizer = SGDMomentum(momentum=0.9)
    optimizer.step(store, {"w": np.array([1.0, -2.0])}, lr=0.1)
    assert np.allclose(store.get("w"), [0.9, 1.2])
    optimizer.step(store, {"w": np.array([1.0, -2.0])}, lr=0.1)
    # v = 0.9·g + g = 1.9·g
    assert np.allclose(store.get("w"), [0.9 - 0.19, 1.2 + 0.38])
    assert store.get("unused")[0] == 3.0


def test_gradients_by_name_skips_unreached_parameters():
    store = ParameterStore()
    store.create("used", (2,), init="constant", value=2.0)
    store.create("idle", (2,), init="constant", value=1.0)
    weights = store.bind()
    with GradTape():
        loss = ops.sum(ops.mul(weights["used"], weights["used"]))
    named = gradients_by_name(weights, backward(loss))
    assert set(named) == {"used"}
    assert np.array_equal(named["used"], [4.0, 4.0])
