"""
SA3 - Evaluation

VOC-style per-class average precision with all-point interpolation,
mean AP over classes that have ground truth, a GT-vs-prediction count
matrix, and the image-level accuracy of the instance-to-image
aggregation.

Complexity Guarantees:
- voc_ap: O(D log D + D·G) for D detections and G ground-truth boxes
- evaluate: one detector pass per image; images may run on worker threads
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.parameters import ParameterStore
from standards.errors import InvalidArgumentError
from standards.performance import profile
from standards.type_definitions import DatasetManifest, Detection, GTInstance, SceneRecord
from .detector import pairwise_iou
from .model import SA3Model

logger = logging.getLogger(__name__)


def ranked(detections: Sequence[Detection]) -> List[Detection]:
    """Descending score; ties by lower image_id, then lower box order."""
    return sorted(detections, key=lambda d: (-d.score, d.image_id, d.order))


def match_detections(detections: Sequence[Detection], gts: Mapping[str, Sequence[GTInstance]],
                     class_id: int, iou_threshold: float = 0.5) -> np.ndarray:
    """
    Greedy matching in the given order: each detection takes the unmatched
    GT of its class and image with the highest IoU ≥ threshold.

    Returns:
        boolean true-positive flag per detection
    """
    claimed: Dict[str, np.ndarray] = {}
    boxes: Dict[str, np.ndarray] = {}
    for image_id, instances in gts.items():
        own = [g.box.as_tuple() for g in instances if g.class_id == class_id]
        boxes[image_id] = np.array(own, dtype=np.float64).reshape(-1, 4)
        claimed[image_id] = np.zeros(len(own), dtype=bool)
    hits = np.zeros(len(detections), dtype=bool)
    for k, det in enumerate(detections):
        candidates = boxes.get(det.image_id)
        if candidates is None or candidates.shape[0] == 0:
            continue
        overlaps = pairwise_iou(np.array([det.box.as_tuple()]), candidates)[0]
        overlaps[claimed[det.image_id]] = -1.0
        best = int(np.argmax(overlaps))
        if overlaps[best] >= iou_threshold:
            claimed[det.image_id][best] = True
            hits[k] = True
    return hits


def interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    """Area under the precision envelope (all-point interpolation)."""
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    changed = np.flatnonzero(mrec[1:] != mrec[:-1])
    return math.fsum(((mrec[changed + 1] - mrec[changed]) * mpre[changed + 1]).tolist())


def count_gt(gts: Mapping[str, Sequence[GTInstance]], class_id: int) -> int:
    return sum(1 for instances in gts.values() for g in instances if g.class_id == class_id)


def voc_ap(detections: Sequence[Detection], gts: Mapping[str, Sequence[GTInstance]], class_id: int,
           iou_threshold: float = 0.5) -> Optional[float]:
    """
    AP of one class; None when the class has no ground truth.

    Args:
        detections: scored detections after NMS (other classes are ignored)
        gts: ground-truth instances keyed by image id
    """
    n_gt = count_gt(gts, class_id)
    if n_gt == 0:
        return None
    own = ranked([d for d in detections if d.class_id == class_id])
    if not own:
        return 0.0
    hits = match_detections(own, gts, class_id, iou_threshold)
    tp = np.cumsum(hits)
    fp = np.cumsum(~hits)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, np.finfo(np.float64).eps)
    return interpolated_ap(recall, precision)


def confusion_counts(detections: Sequence[Detection], gts: Mapping[str, Sequence[GTInstance]],
                     num_classes: int, iou_threshold: float = 0.5) -> np.ndarray:
    """
    (C+1)×(C+1) counts, rows = ground truth class, columns = prediction,
    index C = background.

    Each GT box is credited to the class of its highest-scoring detection
    with IoU ≥ threshold (background when none). Detections overlapping no
    GT at the threshold count in the background row.
    """
    counts = np.zeros((num_classes + 1, num_classes + 1), dtype=np.int64)
    by_image: Dict[str, List[Detection]] = {}
    for det in detections:
        by_image.setdefault(det.image_id, []).append(det)
    for image_id in sorted(set(gts) | set(by_image)):
        instances = list(gts.get(image_id, ()))
        dets = ranked(by_image.get(image_id, []))
        gt_boxes = np.array([g.box.as_tuple() for g in instances], dtype=np.float64).reshape(-1, 4)
        det_boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64).reshape(-1, 4)
        overlaps = pairwise_iou(gt_boxes, det_boxes)
        for g, inst in enumerate(instances):
            hits = np.flatnonzero(overlaps[g] >= iou_threshold) if dets else np.zeros(0, dtype=np.int64)
            predicted = dets[int(hits[0])].class_id if hits.size else num_classes
            counts[inst.class_id, predicted] += 1
        for d, det in enumerate(dets):
            if not instances or overlaps[:, d].max() < iou_threshold:
                counts[num_classes, det.class_id] += 1
    return counts


def image_level_accuracy(probabilities: Sequence[np.ndarray], labels: Sequence[np.ndarray]) -> float:
    """Fraction of (image, class) entries where (P ≥ 0.5) equals the presence label."""
    if not probabilities:
        return 0.0
    predicted = np.stack([np.asarray(p) >= 0.5 for p in probabilities])
    truth = np.stack([np.asarray(y) == 1 for y in labels])
    return float(np.mean(predicted == truth))


@dataclass(frozen=True)
class EvalReport:
    """
    Invariants:
    - every AP lies in [0, 1]
    - map is the arithmetic mean of per_class_ap (0 when no class has GT)
    """
    per_class_ap: Dict[str, float]
    map: float
    n_images: int
    iou_threshold: float
    confusion: np.ndarray = field(compare=False, default_factory=lambda: np.zeros((0, 0), dtype=np.int64))
    image_accuracy: Optional[float] = None

    def __post_init__(self):
        if any(not 0.0 <= ap <= 1.0 for ap in self.per_class_ap.values()):
            raise InvalidArgumentError(f"AP outside [0, 1]: {self.per_class_ap}")

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "per_class_ap": dict(self.per_class_ap),
            "map": self.map,
            "n_images": self.n_images,
            "iou_threshold": self.iou_threshold,
            "confusion": self.confusion.tolist(),
        }
        if self.image_accuracy is not None:
            data["image_accuracy"] = self.image_accuracy
        return data


def evaluate_detections(detections: Sequence[Detection], records: Sequence[SceneRecord],
                        class_names: Sequence[str], iou_threshold: float = 0.5,
                        image_accuracy: Optional[float] = None) -> EvalReport:
    """Score a detection set against the records' ground truth."""
    gts = {rec.image_id: rec.instances for rec in records}
    per_class: Dict[str, float] = {}
    for class_id, name in enumerate(class_names):
        ap = voc_ap(detections, gts, class_id, iou_threshold)
        if ap is not None:
            per_class[name] = ap
            logger.debug("AP[%s] = %.4f", name, ap)
    mean_ap = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return EvalReport(per_class, mean_ap, len(records), iou_threshold,
                      confusion_counts(detections, gts, len(class_names), iou_threshold), image_accuracy)


@profile("evaluate")
def evaluate(model: SA3Model, store: ParameterStore, manifest: DatasetManifest, score_threshold: float = 0.05,
             nms_iou: float = 0.5, iou_threshold: float = 0.5, workers: int = 1) -> EvalReport:
    """
    Run the detector over every record of the manifest and score it.

    Inference is read-only, so `workers > 1` spreads images across threads;
    results are gathered in record order.
    """
    weights = store.frozen()
    records = list(manifest.records)

    def run(record: SceneRecord) -> Tuple[List[Detection], np.ndarray]:
        detections = model.detect(weights, record, score_threshold, nms_iou)
        return detections, model.predict_labels(weights, record)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run, records))
    else:
        outputs = [run(rec) for rec in records]
    detections = [d for dets, _ in outputs for d in dets]
    accuracy = image_level_accuracy([p for _, p in outputs], [r.image_labels.as_array() for r in records])
    report = evaluate_detections(detections, records, manifest.class_names, iou_threshold, accuracy)
    logger.info("evaluated %d images: mAP %.4f (%d detections)", len(records), report.map, len(detections))
    return report
