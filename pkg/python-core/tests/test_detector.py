"""
SA3 - Detector scaffold tests
Box geometry, backbone shapes, proposals, RoI crops and detection losses
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import math

import numpy as np
import pytest

from core import ops
from core.parameters import ParameterStore
from core.tensor import Tensor
from standards.errors import ContractViolationError, EmptyBoxError, InvalidArgumentError
from standards.type_definitions import Box, DomainLabel, GTInstance
from systems.detector import (
    Backbone, DetectionHead, RegionProposalNetwork, RpnOutput, anchor_grid, backbone_forward, clip_boxes,
    decode_deltas, det_head, det_loss, encode_deltas, iou, label_anchors, nms, pairwise_iou, roi_crop,
    rpn_forward, rpn_loss, select_top,
)
from gradcheck import assert_gradients_match


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

def test_iou_examples():
    a = Box(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, Box(5, 0, 15, 10)) == pytest.approx(50 / 150)
    assert iou(a, Box(10, 0, 20, 10)) == 0.0
    assert iou(a, Box(20, 20, 30, 30)) == 0.0


def test_pairwise_iou_agrees_with_scalar_iou():
    boxes = [Box(0, 0, 10, 10), Box(5, 5, 20, 20), Box(30, 0, 40, 8)]
    arr = np.array([b.as_tuple() for b in boxes])
    matrix = pairwise_iou(arr, arr)
    for i, a in enumerate(boxes):
        for j, b in enumerate(boxes):
            assert matrix[i, j] == pytest.approx(iou(a, b), abs=1e-15)


def test_encode_decode_inverse_example():
    reference = np.array([[0.0, 0.0, 32.0, 32.0]])
    target = np.array([[4.0, 2.0, 30.0, 40.0]])
    assert np.allclose(decode_deltas(reference, encode_deltas(reference, target)), target, atol=1e-12)


def test_decode_clamps_large_scale_deltas():
    reference = np.array([[0.0, 0.0, 16.0, 16.0]])
    wide = decode_deltas(reference, np.array([[0.0, 0.0, 50.0, 50.0]]))
    assert wide[0, 2] - wide[0, 0] == pytest.approx(1000.0)


def test_clip_boxes_widens_degenerate_boxes():
    boxes = np.array([[10.0, 10.0, 10.0, 10.0], [64.0, 5.0, 70.0, 9.0], [-5.0, -5.0, 20.0, 20.0]])
    clipped = clip_boxes(boxes, 64, 64)
    assert np.allclose(clipped[0], [9.5, 9.5, 10.5, 10.5])
    assert np.allclose(clipped[1], [63.0, 5.0, 64.0, 9.0])
    assert np.allclose(clipped[2], [0.0, 0.0, 20.0, 20.0])
    assert np.all(clipped[:, 2] > clipped[:, 0]) and np.all(clipped[:, 3] > clipped[:, 1])


def test_nms_keeps_best_of_overlapping_pair():
    boxes = np.array([[0, 0, 10, 10], [1, 1, 11, 11], [30, 30, 40, 40]], dtype=np.float64)
    keep = nms(boxes, np.array([0.8, 0.9, 0.1]), iou_threshold=0.5)
    assert keep.tolist() == [1, 2]


def test_nms_breaks_score_ties_by_index():
    boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10]], dtype=np.float64)
    assert nms(boxes, np.array([0.5, 0.5])).tolist() == [0]


# ---------------------------------------------------------------------------
# Backbone and RPN
# ---------------------------------------------------------------------------

def _store(*components, seed=0):
    store = ParameterStore(seed=seed)
    for component in components:
        component.register(store)
    return store


def test_backbone_shapes_on_64px_input():
    backbone = Backbone(32, 128)
    store = _store(backbone)
    image = Tensor(np.random.default_rng(0).uniform(size=(64, 64, 3)))
    feats = backbone_forward(backbone, store.frozen(), image)
    assert feats.shallow.shape == (16, 16, 32)
    assert feats.deep.shape == (4, 4, 128)


def test_backbone_rejects_bad_images():
    backbone = Backbone(4, 8)
    weights = _store(backbone).frozen()
    with pytest.raises(InvalidArgumentError):
        backbone.forward(weights, Tensor(np.zeros((40, 48, 3))))
    with pytest.raises(InvalidArgumentError):
        backbone.forward(weights, Tensor(np.zeros((32, 32, 1))))


def test_anchor_grid_cells():
    anchors = anchor_grid(4, 4)
    assert anchors.shape == (16, 4)
    assert anchors[0].tolist() == [-8.0, -8.0, 24.0, 24.0]
    assert anchors[5].tolist() == [8.0, 8.0, 40.0, 40.0]


def test_select_top_orders_and_breaks_ties_by_index():
    logits = np.array([0.1, 0.7, 0.7, -1.0])
    assert select_top(logits, 3).tolist() == [1, 2, 0]
    assert select_top(logits, 10).tolist() == [1, 2, 0, 3]


def test_rpn_proposals_are_valid_and_sorted():
    rpn = RegionProposalNetwork(8)
    store = _store(rpn, seed=3)
    deep = Tensor(np.random.default_rng(1).normal(size=(4, 4, 8)))
    proposals = rpn_forward(rpn, store.frozen(), deep, 5, 64, 64)
    assert len(proposals) == 5
    assert np.all(np.diff(proposals.objectness.data) <= 0)
    boxes = proposals.boxes
    assert np.all(boxes[:, 2] > boxes[:, 0]) and np.all(boxes[:, 3] > boxes[:, 1])
    assert np.all(boxes >= 0) and np.all(boxes <= 64)


def test_rpn_proposal_count_shrinks_to_anchor_count():
    rpn = RegionProposalNetwork(8)
    store = _store(rpn)
    proposals = rpn_forward(rpn, store.frozen(), Tensor(np.ones((2, 2, 8))), 100, 32, 32)
    assert len(proposals) == 4


def test_rpn_rejects_zero_proposals():
    rpn = RegionProposalNetwork(8)
    out = rpn.head(_store(rpn).frozen(), Tensor(np.ones((2, 2, 8))))
    with pytest.raises(InvalidArgumentError):
        rpn.propose(out, 0, 32, 32)


# ---------------------------------------------------------------------------
# RPN loss
# ---------------------------------------------------------------------------

ANCHORS = np.array([[0.0, 0.0, 32.0, 32.0], [40.0, 40.0, 72.0, 72.0]])
GT = [GTInstance(Box(2, 2, 34, 30), 0)]


def test_label_anchors_positive_negative_and_ignored():
    labels, _ = label_anchors(ANCHORS, np.array([g.box.as_tuple() for g in GT]))
    assert labels.tolist() == [1, 0]
    ignored, _ = label_anchors(np.array([[0.0, 0.0, 32.0, 32.0]]), np.array([[0.0, 0.0, 32.0, 12.8]]))
    assert ignored.tolist() == [-1]


def test_label_anchors_without_gt_are_all_negative():
    labels, _ = label_anchors(ANCHORS, np.zeros((0, 4)))
    assert labels.tolist() == [0, 0]


def test_rpn_loss_value_with_zero_outputs():
    out = RpnOutput(ANCHORS, Tensor(np.zeros(2)), Tensor(np.zeros((2, 4))))
    targets = encode_deltas(ANCHORS[:1], np.array([[2.0, 2.0, 34.0, 30.0]]))
    expected_reg = sum(abs(t) - 0.5 if abs(t) >= 1 else 0.5 * t * t for t in targets[0])
    assert rpn_loss(out, GT).item() == pytest.approx(math.log(2) + expected_reg, abs=1e-6)


def test_rpn_loss_ignores_unlabelled_anchors():
    anchors = np.array([[0.0, 0.0, 32.0, 32.0]])
    out = RpnOutput(anchors, Tensor(np.array([3.0])), Tensor(np.zeros((1, 4))))
    loss = rpn_loss(out, [GTInstance(Box(0, 0, 32, 12.8), 0)])
    assert loss.item() == 0.0


@pytest.mark.parametrize("seed", range(20))
def test_rpn_loss_gradients(seed):
    rng = np.random.default_rng(seed)

    def loss(objectness, deltas):
        return rpn_loss(RpnOutput(ANCHORS, objectness, deltas), GT)

    assert_gradients_match(loss, rng.normal(size=2), rng.normal(scale=0.2, size=(2, 4)))


def test_rpn_loss_rejects_target_domain():
    out = RpnOutput(ANCHORS, Tensor(np.zeros(2)), Tensor(np.zeros((2, 4))))
    with pytest.raises(ContractViolationError):
        rpn_loss(out, GT, DomainLabel.TARGET)


# ---------------------------------------------------------------------------
# RoI crops and detection head
# ---------------------------------------------------------------------------

def test_roi_crop_of_constant_map_is_constant():
    feature = Tensor(np.full((4, 4, 3), 2.5))
    crop = roi_crop(feature, Box(3, 5, 40, 50), 7, 16)
    assert crop.shape == (7, 7, 3)
    assert np.allclose(crop.data, 2.5)


def test_roi_crop_clips_to_the_map():
    feature = Tensor(np.random.default_rng(0).normal(size=(4, 4, 2)))
    inside = roi_crop(feature, Box(32, 32, 64, 64), 3, 16)
    overhanging = roi_crop(feature, Box(32, 32, 90, 90), 3, 16)
    assert np.array_equal(inside.data, overhanging.data)


def test_roi_crop_outside_the_map_is_empty():
    feature = Tensor(np.ones((4, 4, 2)))
    with pytest.raises(EmptyBoxError):
        roi_crop(feature, Box(70, 70, 90, 90), 3, 16)


def test_det_head_with_zero_weights_outputs_zeros():
    head = DetectionHead(3, channels=4, roi_size=2, hidden=5)
    store = _store(head)
    for name in store.names():
        store.assign(name, np.zeros(store.shapes()[name]))
    logits, refinement = det_head(head, store.frozen(), Tensor(np.ones((2, 2, 4))))
    assert logits.shape == (4,) and refinement.shape == (4,)
    assert np.array_equal(logits.data, np.zeros(4))
    assert np.array_equal(refinement.data, np.zeros(4))


def test_det_head_rejects_wrong_crop_shape():
    head = DetectionHead(3, channels=4, roi_size=2, hidden=5)
    with pytest.raises(InvalidArgumentError):
        det_head(head, _store(head).frozen(), Tensor(np.ones((3, 3, 4))))


def test_det_head_batch_forward_shapes():
    head = DetectionHead(2, channels=4, roi_size=3, hidden=6)
    store = _store(head)
    feature = Tensor(np.random.default_rng(2).normal(size=(4, 4, 4)))
    boxes = np.array([[0.0, 0.0, 20.0, 20.0], [10.0, 30.0, 60.0, 64.0]])
    logits, refinements = head.forward(store.frozen(), feature, boxes)
    assert logits.shape == (2, 3) and refinements.shape == (2, 4)


PROPOSALS = np.array([[0.0, 0.0, 30.0, 30.0], [4.0, 1.0, 33.0, 31.0], [40.0, 40.0, 60.0, 60.0]])
DET_GT = [GTInstance(Box(2, 2, 32, 31), 1)]


def test_det_loss_without_gt_is_background_cross_entropy():
    logits = Tensor(np.zeros((3, 4)))
    loss = det_loss(logits, Tensor(np.zeros((3, 4))), PROPOSALS, [])
    assert loss.item() == pytest.approx(math.log(4))


@pytest.mark.parametrize("seed", range(20))
def test_det_loss_gradients(seed):
    rng = np.random.default_rng(10 + seed)

    def loss(logits, refinements):
        return det_loss(logits, refinements, PROPOSALS, DET_GT)

    assert_gradients_match(loss, rng.normal(size=(3, 3)), rng.normal(scale=0.1, size=(3, 4)))


def test_det_loss_rejects_target_domain():
    with pytest.raises(ContractViolationError):
        det_loss(Tensor(np.zeros((3, 3))), Tensor(np.zeros((3, 4))), PROPOSALS, DET_GT, DomainLabel.TARGET)
