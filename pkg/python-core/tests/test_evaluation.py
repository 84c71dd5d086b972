"""
SA3 - Evaluation tests
Average precision, matching, count matrix and the end-to-end evaluator
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import numpy as np
import pytest

from content.scene_generator import generate_scene
from standards.errors import InvalidArgumentError
from standards.type_definitions import Box, DatasetManifest, Detection, DomainLabel, GTInstance, Split
from systems.evaluation import (
    EvalReport, confusion_counts, evaluate, evaluate_detections, image_level_accuracy, interpolated_ap,
    match_detections, ranked, voc_ap,
)
from systems.model import ModelConfig, SA3Model


def det(image_id, class_id, score, box, order=0):
    return Detection(image_id, class_id, score, Box(*box), order)


def gt(class_id, box):
    return GTInstance(Box(*box), class_id)


GTS = {"a": (gt(0, (0, 0, 10, 10)), gt(0, (20, 20, 30, 30)))}


def sweep_ap(hits, n_gt):
    """Each true positive adds 1/n_gt recall at the best precision reached at or after it."""
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    return sum(precision[k:].max() / n_gt for k in range(len(hits)) if hits[k])


# ---------------------------------------------------------------------------
# Average precision
# ---------------------------------------------------------------------------

def test_ap_hand_example():
    detections = [
        det("a", 0, 0.9, (0, 0, 10, 10)),
        det("a", 0, 0.8, (40, 40, 50, 50)),
        det("a", 0, 0.7, (20, 20, 30, 30)),
    ]
    assert voc_ap(detections, GTS, 0) == pytest.approx(0.5 + 0.5 * 2 / 3, abs=1e-12)


def test_ap_walkthroughs():
    one = {"a": (gt(0, (0, 0, 10, 10)),)}
    assert voc_ap([det("a", 0, 0.9, (0, 0, 10, 8))], one, 0) == 1.0
    twice = [det("a", 0, 0.9, (0, 0, 10, 10)), det("a", 0, 0.8, (1, 0, 10, 10), 1)]
    assert voc_ap(twice, one, 0) == 1.0
    assert voc_ap([det("a", 0, 0.9, (0, 0, 10, 10))], GTS, 0) == 0.5


def test_ap_perfect_and_empty():
    perfect = [det("a", 0, 0.9, (0, 0, 10, 10)), det("a", 0, 0.8, (20, 20, 30, 30))]
    assert voc_ap(perfect, GTS, 0) == 1.0
    assert voc_ap([], GTS, 0) == 0.0
    assert voc_ap(perfect, GTS, 1) is None


def test_duplicate_detection_is_a_false_positive():
    detections = [det("a", 0, 0.9, (0, 0, 10, 10)), det("a", 0, 0.8, (0, 0, 10, 10), order=1)]
    assert match_detections(detections, GTS, 0).tolist() == [True, False]


def test_match_respects_iou_threshold():
    shifted = [det("a", 0, 0.9, (5, 0, 15, 10))]
    assert match_detections(shifted, GTS, 0, iou_threshold=0.5).tolist() == [False]
    assert match_detections(shifted, GTS, 0, iou_threshold=0.3).tolist() == [True]


def test_ranking_breaks_ties_by_image_then_order():
    detections = [det("b", 0, 0.5, (0, 0, 1, 1), 0), det("a", 0, 0.5, (0, 0, 1, 1), 1),
                  det("a", 0, 0.5, (0, 0, 1, 1), 0), det("c", 0, 0.9, (0, 0, 1, 1), 0)]
    assert [(d.image_id, d.order) for d in ranked(detections)] == [("c", 0), ("a", 0), ("a", 1), ("b", 0)]


def test_interpolated_ap_matches_sweep_on_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(200):
        length = int(rng.integers(1, 30))
        hits = rng.random(length) < 0.5
        n_gt = int(hits.sum() + rng.integers(0, 4))
        if n_gt == 0:
            continue
        tp = np.cumsum(hits)
        recall = tp / n_gt
        precision = tp / np.arange(1, length + 1)
        assert abs(interpolated_ap(recall, precision) - sweep_ap(hits, n_gt)) <= 1e-12


def _box_iou(a, b):
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    if w <= 0 or h <= 0:
        return 0.0
    inter = w * h
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def threshold_sweep_ap(detections, gts, n_gt):
    """Precision and recall recomputed from scratch at every score cutoff."""
    order = sorted(detections, key=lambda d: -d[1])
    points = []
    for cutoff in range(1, len(order) + 1):
        taken = set()
        tp = 0
        for image_id, _, box in order[:cutoff]:
            best, best_iou = None, 0.5
            for k, (gt_image, gt_box) in enumerate(gts):
                if gt_image != image_id or k in taken:
                    continue
                overlap = _box_iou(box, gt_box)
                if overlap >= best_iou and (best is None or overlap > best_iou):
                    best, best_iou = k, overlap
            if best is not None:
                taken.add(best)
                tp += 1
        points.append((tp / n_gt, tp / cutoff))
    ap, previous = 0.0, 0.0
    for k, (recall, _) in enumerate(points):
        if recall > previous:
            ap += (recall - previous) * max(p for _, p in points[k:])
            previous = recall
    return ap


def test_voc_ap_matches_threshold_sweep_on_random_instances():
    rng = np.random.default_rng(21)
    for _ in range(200):
        gt_list = []
        for _ in range(int(rng.integers(1, 6))):
            x, y = (int(v) for v in rng.integers(0, 40, size=2))
            side = int(rng.integers(6, 20))
            gt_list.append((str(rng.choice(["p", "q"])), (x, y, x + side, y + side)))
        raw = []
        scores = rng.permutation(100)[:int(rng.integers(1, 11))] / 100.0 + 0.001
        for score in scores:
            image_id, (x1, y1, x2, y2) = gt_list[int(rng.integers(len(gt_list)))]
            dx, dy = (int(v) for v in rng.integers(-4, 5, size=2))
            raw.append((image_id, float(score), (x1 + dx, y1 + dy, x2 + dx, y2 + dy)))
        gts = {}
        for image_id, box in gt_list:
            gts.setdefault(image_id, []).append(gt(0, box))
        detections = [det(image_id, 0, score, box, k) for k, (image_id, score, box) in enumerate(raw)]
        assert abs(voc_ap(detections, gts, 0) - threshold_sweep_ap(raw, gt_list, len(gt_list))) <= 1e-9


def test_oracle_detections_score_full_map():
    records = [generate_scene(s, DomainLabel.TARGET, keep_instances=True, image_id=f"t{s}") for s in range(20)]
    detections = [det(r.image_id, g.class_id, 1.0, g.box.as_tuple(), k)
                  for r in records for k, g in enumerate(r.instances)]
    report = evaluate_detections(detections, records, ("circle", "square", "triangle"))
    assert report.map == 1.0
    assert all(ap == 1.0 for ap in report.per_class_ap.values())
    assert np.trace(report.confusion) == sum(len(r.instances) for r in records)


def test_empty_detection_set_scores_zero():
    records = [generate_scene(s, DomainLabel.TARGET, keep_instances=True, image_id=f"t{s}") for s in range(5)]
    report = evaluate_detections([], records, ("circle", "square", "triangle"))
    assert report.map == 0.0
    assert set(report.per_class_ap.values()) == {0.0}


def test_classes_without_ground_truth_are_left_out_of_the_mean():
    records = [generate_scene(0, DomainLabel.TARGET, keep_instances=True, image_id="only")]
    present = {g.class_id for g in records[0].instances}
    report = evaluate_detections([], records, ("circle", "square", "triangle"))
    assert len(report.per_class_ap) == len(present)


# ---------------------------------------------------------------------------
# Count matrix and image-level accuracy
# ---------------------------------------------------------------------------

def test_confusion_counts():
    gts = {"a": (gt(0, (0, 0, 10, 10)), gt(1, (20, 20, 30, 30))), "b": ()}
    detections = [
        det("a", 1, 0.9, (0, 0, 10, 10)),       # class-0 box called class 1
        det("a", 0, 0.4, (0, 0, 10, 10), 1),    # lower score, ignored for the GT row
        det("b", 0, 0.7, (5, 5, 15, 15)),       # nothing to hit
    ]
    counts = confusion_counts(detections, gts, 2)
    assert counts.shape == (3, 3)
    assert counts[0, 1] == 1
    assert counts[1, 2] == 1
    assert counts[2, 0] == 1
    assert counts.sum() == 3


def test_image_level_accuracy():
    probs = [np.array([0.9, 0.2]), np.array([0.4, 0.6])]
    labels = [np.array([1, 0]), np.array([1, 1])]
    assert image_level_accuracy(probs, labels) == 0.75
    assert image_level_accuracy([], []) == 0.0


def test_report_rejects_out_of_range_ap():
    with pytest.raises(InvalidArgumentError):
        EvalReport({"circle": 1.5}, 1.5, 1, 0.5)


# ---------------------------------------------------------------------------
# End to end
# ---------------------------------------------------------------------------

def test_evaluate_untrained_model_is_consistent_across_workers():
    cfg = ModelConfig(num_classes=2, image_size=32, shallow_channels=8, deep_channels=16,
                      proposals=8, roi_size=3, head_hidden=16)
    records = tuple(generate_scene(s, DomainLabel.TARGET, 32, 32, 2, keep_instances=True, image_id=f"t{s:02d}")
                    for s in range(4))
    manifest = DatasetManifest(("circle", "square"), records, 0, Split.TEST, 32)
    model = SA3Model(cfg)
    store = model.init_parameters(1)
    serial = evaluate(model, store, manifest)
    threaded = evaluate(model, store, manifest, workers=2)
    assert serial.n_images == 4
    assert 0.0 <= serial.map <= 1.0
    assert serial.per_class_ap == threaded.per_class_ap
    assert np.array_equal(serial.confusion, threaded.confusion)
    assert 0.0 <= serial.image_accuracy <= 1.0
    data = serial.to_dict()
    assert set(data) == {"per_class_ap", "map", "n_images", "iou_threshold", "confusion", "image_accuracy"}
