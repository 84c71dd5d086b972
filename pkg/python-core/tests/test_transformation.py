"""
SA3 - Instance-to-image transformation tests
Objectness matrix construction, image-level aggregation and its loss
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import math

import numpy as np
import pytest

from core.tensor import Tensor
from standards.errors import ContractViolationError, InvalidArgumentError
from standards.type_definitions import DomainLabel, ImageLabelVector
from systems.transformation import (
    ClassSpecificObjectness, ImagePrediction, aggregate_image_prediction, assignment_pattern,
    build_objectness_matrix, i2itm_loss,
)
from gradcheck import assert_gradients_match


def _predict(o, x, x_bar=None):
    x_bar = x if x_bar is None else x_bar
    return aggregate_image_prediction(Tensor(x_bar), build_objectness_matrix(Tensor(o), Tensor(x))).values()


def loop_oracle(o, x):
    """Independent per-entry evaluation with explicit loops."""
    n_rows, n_cls = len(x), len(x[0])
    o_bar = [[0.0] * n_cls for _ in range(n_rows)]
    for n in range(n_rows):
        row = list(x[n])
        high = row.index(max(row))
        low = n_cls - 1 - row[::-1].index(min(row))
        o_bar[n][high] = o[n]
        o_bar[n][low] = -o[n]
    row_soft = []
    for n in range(n_rows):
        top = max(x[n])
        e = [math.exp(v - top) for v in x[n]]
        total = math.fsum(e)
        row_soft.append([v / total for v in e])
    col_soft = [[0.0] * n_cls for _ in range(n_rows)]
    for c in range(n_cls):
        column = [o_bar[n][c] for n in range(n_rows)]
        top = max(column)
        e = [math.exp(v - top) for v in column]
        total = math.fsum(e)
        for n in range(n_rows):
            col_soft[n][c] = e[n] / total
    return [math.fsum(row_soft[n][c] * col_soft[n][c] for n in range(n_rows)) for c in range(n_cls)]


# ---------------------------------------------------------------------------
# Objectness matrix
# ---------------------------------------------------------------------------

def test_objectness_matrix_examples():
    built = build_objectness_matrix(Tensor(np.array([1.0, -0.5])), Tensor(np.array([[2.0, 0.0], [0.0, 1.0]])))
    assert built.matrix.data.tolist() == [[1.0, -1.0], [0.5, -0.5]]
    three = build_objectness_matrix(Tensor(np.array([2.0])), Tensor(np.array([[0.1, 0.9, -0.3]])))
    assert three.matrix.data.tolist() == [[0.0, 2.0, -2.0]]


def test_assignment_pattern_ties():
    pattern = assignment_pattern(np.array([[1.0, 1.0, 1.0], [0.0, 2.0, 2.0], [3.0, 1.0, 1.0]]))
    assert pattern.tolist() == [[1.0, 0.0, -1.0], [-1.0, 1.0, 0.0], [1.0, 0.0, -1.0]]
    flat_two = assignment_pattern(np.array([[4.0, 4.0]]))
    assert flat_two.tolist() == [[1.0, -1.0]]


def test_objectness_matrix_rejects_bad_shapes():
    with pytest.raises(InvalidArgumentError):
        build_objectness_matrix(Tensor(np.ones(2)), Tensor(np.ones((2, 1))))
    with pytest.raises(InvalidArgumentError):
        build_objectness_matrix(Tensor(np.ones(3)), Tensor(np.ones((2, 3))))


def test_class_specific_objectness_validates_pattern():
    with pytest.raises(InvalidArgumentError):
        ClassSpecificObjectness(Tensor(np.zeros((1, 3))), np.array([[1.0, 1.0, 0.0]]))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def test_worked_example():
    probs = _predict(np.array([1.0, -0.5]), np.array([[2.0, 0.0], [0.0, 1.0]]))
    assert probs == pytest.approx([0.6498, 0.5001], abs=1e-3)
    prediction = aggregate_image_prediction(
        Tensor(np.array([[2.0, 0.0], [0.0, 1.0]])),
        build_objectness_matrix(Tensor(np.array([1.0, -0.5])), Tensor(np.array([[2.0, 0.0], [0.0, 1.0]]))))
    loss = i2itm_loss(prediction, ImageLabelVector((1, 0)))
    assert loss.item() == pytest.approx(0.5621, abs=1e-3)


def test_matches_loop_oracle_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n, c = int(rng.integers(1, 7)), int(rng.integers(2, 6))
        o = rng.normal(scale=2.0, size=n)
        x = rng.normal(scale=2.0, size=(n, c))
        expected = loop_oracle(o.tolist(), x.tolist())
        assert np.max(np.abs(_predict(o, x) - np.array(expected))) <= 1e-12


def test_single_proposal_reduces_to_row_softmax():
    x = np.array([[0.5, -1.0, 2.0]])
    e = np.exp(x[0] - x[0].max())
    assert np.allclose(_predict(np.array([0.3]), x), e / e.sum(), atol=1e-15)


def test_probabilities_stay_strictly_inside_unit_interval():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        n, c = int(rng.integers(1, 65)), int(rng.integers(2, 21))
        probs = _predict(rng.normal(scale=3.0, size=n), rng.normal(scale=3.0, size=(n, c)))
        assert np.all(probs > 0.0) and np.all(probs < 1.0)


def test_exactly_invariant_to_proposal_order():
    rng = np.random.default_rng(13)
    o = rng.normal(size=8)
    x = rng.normal(size=(8, 4))
    order = rng.permutation(8)
    assert np.array_equal(_predict(o, x), _predict(o[order], x[order]))


def test_invariant_to_row_shift_of_class_logits():
    rng = np.random.default_rng(17)
    o = rng.normal(size=5)
    x = rng.normal(size=(5, 3))
    shifted = x + rng.normal(scale=10.0, size=(5, 1))
    assert np.allclose(_predict(o, x, x_bar=x), _predict(o, x, x_bar=shifted), atol=1e-12)


def test_aggregation_rejects_shape_mismatch():
    built = build_objectness_matrix(Tensor(np.ones(2)), Tensor(np.array([[1.0, 0.0], [0.0, 1.0]])))
    with pytest.raises(InvalidArgumentError):
        aggregate_image_prediction(Tensor(np.ones((3, 2))), built)


def test_image_prediction_rejects_out_of_range_values():
    with pytest.raises(InvalidArgumentError):
        ImagePrediction(Tensor(np.array([0.5, 1.5])))
    with pytest.raises(InvalidArgumentError):
        ImagePrediction(Tensor(np.array([0.5, float("nan")])))


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def test_loss_is_target_only():
    prediction = ImagePrediction(Tensor(np.array([0.5, 0.5])))
    with pytest.raises(ContractViolationError):
        i2itm_loss(prediction, ImageLabelVector((1, 0)), DomainLabel.SOURCE)
    with pytest.raises(InvalidArgumentError):
        i2itm_loss(prediction, ImageLabelVector((1, 0, 0)))


def test_loss_accepts_all_zero_labels():
    prediction = ImagePrediction(Tensor(np.array([0.5, 0.5])))
    assert i2itm_loss(prediction, ImageLabelVector((0, 0))).item() == pytest.approx(math.log(2))


def _untied_logits(rng, n, c, gap=1e-3):
    """Class logits whose row extremes are at least `gap` away from the runner-up."""
    while True:
        x = rng.normal(size=(n, c))
        ordered = np.sort(x, axis=1)
        if np.all(ordered[:, -1] - ordered[:, -2] > gap) and np.all(ordered[:, 1] - ordered[:, 0] > gap):
            return x


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients(seed):
    rng = np.random.default_rng(100 + seed)
    n, c = 4, 3
    labels = ImageLabelVector(tuple(int(v) for v in rng.integers(0, 2, size=c)))

    def loss(o, x):
        prediction = aggregate_image_prediction(x, build_objectness_matrix(o, x))
        return i2itm_loss(prediction, labels)

    assert_gradients_match(loss, rng.normal(size=n), _untied_logits(rng, n, c))
