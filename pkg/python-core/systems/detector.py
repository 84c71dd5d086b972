"""
SA3 - Two-Stage Detector

Backbone with shallow/deep taps, a single-anchor-per-cell region proposal
network and a two-layer RoI head, plus the supervised source-domain
losses that train them.

Geometry:
- feature maps are H×W×C
- shallow tap: stride 4, deep tap: stride 16
- one square 32px anchor centred on every deep cell

Complexity Guarantees:
- backbone_forward: O(H·W·C²) convolutions
- rpn proposal selection: O(A log A) for A anchors
- pairwise_iou: O(n·m)
- nms: O(n²) worst case
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core import ops
from core.parameters import ParameterStore, Weights
from core.tensor import Tensor
from standards.errors import ContractViolationError, InvalidArgumentError
from standards.formal_specs import requires, verify_complexity
from standards.performance import LRUCache
from standards.type_definitions import Box, DomainLabel, GTInstance

logger = logging.getLogger(__name__)

TOTAL_STRIDE = 16
SHALLOW_STRIDE = 4
ANCHOR_SIZE = 32.0
POSITIVE_IOU = 0.5
NEGATIVE_IOU = 0.3
FOREGROUND_IOU = 0.5
DELTA_CLAMP = math.log(1000.0 / 16.0)
MIN_BOX_SIZE = 1.0


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


# ---------------------------------------------------------------------------
# Box geometry
# ---------------------------------------------------------------------------

def iou(a: Box, b: Box) -> float:
    """Intersection over union of two valid boxes; 0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area() + b.area() - inter)


@verify_complexity(time="O(n)", space="O(n)", description="n = |a|·|b| box pairs")
def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(n,4) × (m,4) → (n,m) IoU matrix."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def encode_deltas(reference: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Box regression targets (dx, dy, dw, dh) of `target` relative to `reference`."""
    rw = reference[:, 2] - reference[:, 0]
    rh = reference[:, 3] - reference[:, 1]
    rx = reference[:, 0] + 0.5 * rw
    ry = reference[:, 1] + 0.5 * rh
    tw = target[:, 2] - target[:, 0]
    th = target[:, 3] - target[:, 1]
    tx = target[:, 0] + 0.5 * tw
    ty = target[:, 1] + 0.5 * th
    return np.stack([(tx - rx) / rw, (ty - ry) / rh, np.log(tw / rw), np.log(th / rh)], axis=1)


def decode_deltas(reference: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Inverse of encode_deltas; dw/dh are clamped at log(1000/16) before exponentiation."""
    rw = reference[:, 2] - reference[:, 0]
    rh = reference[:, 3] - reference[:, 1]
    rx = reference[:, 0] + 0.5 * rw
    ry = reference[:, 1] + 0.5 * rh
    dw = np.minimum(deltas[:, 2], DELTA_CLAMP)
    dh = np.minimum(deltas[:, 3], DELTA_CLAMP)
    cx = rx + deltas[:, 0] * rw
    cy = ry + deltas[:, 1] * rh
    w = rw * np.exp(dw)
    h = rh * np.exp(dh)
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def clip_boxes(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """
    Clip to [0, width] × [0, height], then widen any side shorter than one
    pixel to exactly one pixel, centred as close to the original as the
    image allows. Every returned box is valid.
    """
    out = np.empty_like(boxes)
    out[:, 0::2] = np.clip(boxes[:, 0::2], 0.0, width)
    out[:, 1::2] = np.clip(boxes[:, 1::2], 0.0, height)
    for lo, hi, extent in ((0, 2, width), (1, 3, height)):
        thin = (out[:, hi] - out[:, lo]) < MIN_BOX_SIZE
        if thin.any():
            centre = np.clip(0.5 * (out[thin, lo] + out[thin, hi]),
                             0.5 * MIN_BOX_SIZE, extent - 0.5 * MIN_BOX_SIZE)
            out[thin, lo] = centre - 0.5 * MIN_BOX_SIZE
            out[thin, hi] = centre + 0.5 * MIN_BOX_SIZE
    return out


@verify_complexity(time="O(n²)", space="O(n)", description="n = candidate boxes")
def nms(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float = 0.5) -> np.ndarray:
    """
    Greedy non-maximum suppression.

    Candidates are visited by descending score (ties: lower index first); a
    candidate is dropped when its IoU with an already kept box exceeds
    `iou_threshold`.

    Returns:
        indices of kept boxes in visiting order
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep: List[int] = []
    for idx in order:
        if keep and np.any(pairwise_iou(boxes[idx:idx + 1], boxes[keep])[0] > iou_threshold):
            continue
        keep.append(int(idx))
    return np.asarray(keep, dtype=np.int64)


# ---------------------------------------------------------------------------
# Backbone
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeaturePair:
    """
    Shallow and deep backbone taps.

    Invariants:
    - deep spatial extents do not exceed shallow ones
    - both channel counts are powers of two
    """
    shallow: Tensor
    deep: Tensor

    def __post_init__(self):
        if self.shallow.ndim != 3 or self.deep.ndim != 3:
            raise InvalidArgumentError("feature taps must be H×W×C maps")
        if self.deep.shape[0] > self.shallow.shape[0] or self.deep.shape[1] > self.shallow.shape[1]:
            raise InvalidArgumentError(f"deep map {self.deep.shape} larger than shallow {self.shallow.shape}")
        if not (_is_power_of_two(self.shallow.shape[2]) and _is_power_of_two(self.deep.shape[2])):
            raise InvalidArgumentError("feature channel counts must be powers of two")


class Backbone:
    """
    Three conv stages, ReLU after every conv:
        stage 1: two stride-2 3×3 convs → shallow tap (stride 4)
        stage 2: one stride-2 3×3 conv
        stage 3: one stride-2 3×3 conv → deep tap (stride 16)
    """

    def __init__(self, shallow_channels: int = 32, deep_channels: int = 128, prefix: str = "backbone"):
        if not (_is_power_of_two(shallow_channels) and _is_power_of_two(deep_channels)):
            raise InvalidArgumentError("backbone channel counts must be powers of two")
        if shallow_channels < 2 or deep_channels < 2:
            raise InvalidArgumentError("backbone channel counts must be at least 2")
        self.prefix = prefix
        self.shallow_channels = shallow_channels
        self.deep_channels = deep_channels
        middle = max(deep_channels // 2, 1)
        self.layers: Tuple[Tuple[str, int, int], ...] = (
            ("stage1.conv1", 3, max(shallow_channels // 2, 1)),
            ("stage1.conv2", max(shallow_channels // 2, 1), shallow_channels),
            ("stage2.conv", shallow_channels, middle),
            ("stage3.conv", middle, deep_channels),
        )

    def register(self, store: ParameterStore) -> None:
        for name, cin, cout in self.layers:
            store.create(f"{self.prefix}.{name}.weight", (3, 3, cin, cout), init="he", fan_in=9 * cin)
            store.create(f"{self.prefix}.{name}.bias", (cout,), init="constant")

    def _conv(self, weights: Weights, name: str, x: Tensor) -> Tensor:
        out = ops.conv2d(x, weights[f"{self.prefix}.{name}.weight"], weights[f"{self.prefix}.{name}.bias"],
                         stride=2, padding=1)
        return ops.relu(out)

    def forward(self, weights: Weights, image: Tensor) -> FeaturePair:
        """
        Raises:
            InvalidArgumentError: image not H×W×3 or sides not divisible by 16
        """
        if image.ndim != 3 or image.shape[2] != 3:
            raise InvalidArgumentError(f"backbone needs an H×W×3 image, got shape {image.shape}")
        height, width = image.shape[:2]
        if height % TOTAL_STRIDE or width % TOTAL_STRIDE:
            raise InvalidArgumentError(f"image sides must be divisible by {TOTAL_STRIDE}, got {height}x{width}")
        x = self._conv(weights, "stage1.conv1", image)
        shallow = self._conv(weights, "stage1.conv2", x)
        x = self._conv(weights, "stage2.conv", shallow)
        deep = self._conv(weights, "stage3.conv", x)
        return FeaturePair(shallow, deep)


def backbone_forward(backbone: Backbone, weights: Weights, image: Tensor) -> FeaturePair:
    return backbone.forward(weights, image)


# ---------------------------------------------------------------------------
# Region proposal network
# ---------------------------------------------------------------------------

_anchor_cache: LRUCache = LRUCache(capacity=32)


def anchor_grid(feat_h: int, feat_w: int, stride: int = TOTAL_STRIDE, size: float = ANCHOR_SIZE) -> np.ndarray:
    """
    (feat_h·feat_w, 4) anchors in row-major cell order, centred on
    ((c + ½)·stride, (r + ½)·stride). Anchors are not clipped.
    """
    def build() -> np.ndarray:
        rows, cols = np.meshgrid(np.arange(feat_h), np.arange(feat_w), indexing="ij")
        cx = (cols.ravel() + 0.5) * stride
        cy = (rows.ravel() + 0.5) * stride
        half = 0.5 * size
        grid = np.stack([cx - half, cy - half, cx + half, cy + half], axis=1).astype(np.float64)
        grid.setflags(write=False)
        return grid
    return _anchor_cache.get_or_compute((feat_h, feat_w, stride, size), build)


@dataclass(frozen=True)
class RpnOutput:
    """Per-anchor objectness logits (A,) and box deltas (A,4) with their anchors."""
    anchors: np.ndarray
    objectness: Tensor
    deltas: Tensor

    def __post_init__(self):
        count = self.anchors.shape[0]
        if self.objectness.shape != (count,) or self.deltas.shape != (count, 4):
            raise InvalidArgumentError(
                f"RPN output shapes {self.objectness.shape}, {self.deltas.shape} do not match {count} anchors")


@dataclass(frozen=True)
class ProposalSet:
    """
    Top-N proposals.

    Invariants:
    - boxes is (N,4) of valid boxes, objectness is (N,) and non-increasing
    - class_logits (N, C+1) and box_refinements (N,4) are filled by the head
    """
    boxes: np.ndarray
    objectness: Tensor
    anchor_indices: np.ndarray
    class_logits: Optional[Tensor] = None
    box_refinements: Optional[Tensor] = None

    def __post_init__(self):
        n = self.boxes.shape[0]
        if n < 1 or self.objectness.shape != (n,) or self.anchor_indices.shape != (n,):
            raise InvalidArgumentError("proposal fields must agree on N ≥ 1")
        if np.any(np.diff(self.objectness.data) > 0):
            raise InvalidArgumentError("proposal objectness must be non-increasing")
        if self.class_logits is not None and (self.class_logits.ndim != 2 or self.class_logits.shape[0] != n):
            raise InvalidArgumentError(f"class logits shape {self.class_logits.shape} does not match {n} proposals")
        if self.box_refinements is not None and self.box_refinements.shape != (n, 4):
            raise InvalidArgumentError(f"refinement shape {self.box_refinements.shape} does not match {n} proposals")

    def __len__(self) -> int:
        return int(self.boxes.shape[0])

    def with_head(self, class_logits: Tensor, box_refinements: Tensor) -> 'ProposalSet':
        return ProposalSet(self.boxes, self.objectness, self.anchor_indices, class_logits, box_refinements)

    def foreground_logits(self) -> Tensor:
        """x ∈ R^{N×C}: the class logits without the trailing background column."""
        if self.class_logits is None:
            raise InvalidArgumentError("proposals have not been through the detection head")
        return ops.take(self.class_logits, range(self.class_logits.shape[1] - 1), axis=1)


def select_top(objectness: np.ndarray, n_proposals: int) -> np.ndarray:
    """Indices of the N largest logits, ties broken by lower index; N shrinks to the anchor count."""
    count = min(n_proposals, objectness.shape[0])
    order = np.lexsort((np.arange(objectness.shape[0]), -objectness))
    return order[:count]


class RegionProposalNetwork:
    """1×1 conv head on the deep map: one objectness logit and four deltas per anchor."""

    def __init__(self, deep_channels: int = 128, prefix: str = "rpn"):
        self.deep_channels = deep_channels
        self.prefix = prefix

    def register(self, store: ParameterStore) -> None:
        c = self.deep_channels
        store.create(f"{self.prefix}.cls.weight", (c, 1), init="normal", std=0.01)
        store.create(f"{self.prefix}.cls.bias", (1,), init="constant")
        store.create(f"{self.prefix}.bbox.weight", (c, 4), init="normal", std=0.01)
        store.create(f"{self.prefix}.bbox.bias", (4,), init="constant")

    def head(self, weights: Weights, deep: Tensor) -> RpnOutput:
        feat_h, feat_w, channels = deep.shape
        flat = ops.reshape(deep, (feat_h * feat_w, channels))
        logits = ops.add(ops.matmul(flat, weights[f"{self.prefix}.cls.weight"]), weights[f"{self.prefix}.cls.bias"])
        deltas = ops.add(ops.matmul(flat, weights[f"{self.prefix}.bbox.weight"]), weights[f"{self.prefix}.bbox.bias"])
        return RpnOutput(anchor_grid(feat_h, feat_w), ops.reshape(logits, (feat_h * feat_w,)), deltas)

    @requires(lambda self, rpn_out, n_proposals, image_h, image_w: n_proposals >= 1,
              "N must be at least 1")
    def propose(self, rpn_out: RpnOutput, n_proposals: int, image_h: int, image_w: int) -> ProposalSet:
        boxes = clip_boxes(decode_deltas(rpn_out.anchors, rpn_out.deltas.data), image_w, image_h)
        top = select_top(rpn_out.objectness.data, n_proposals)
        return ProposalSet(boxes[top], ops.take(rpn_out.objectness, top), top)


def rpn_forward(rpn: RegionProposalNetwork, weights: Weights, deep: Tensor, n_proposals: int,
                image_h: int, image_w: int) -> ProposalSet:
    """Head plus top-N selection; proposals carry boxes and objectness only."""
    return rpn.propose(rpn.head(weights, deep), n_proposals, image_h, image_w)


def label_anchors(anchors: np.ndarray, gt_boxes: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Anchor labels: 1 if IoU ≥ 0.5 with some GT, 0 if the best IoU ≤ 0.3,
    −1 (ignored) otherwise.

    Returns:
        (labels, index of the best-matching GT per anchor)
    """
    count = anchors.shape[0]
    if gt_boxes.shape[0] == 0:
        return np.zeros(count, dtype=np.int64), np.zeros(count, dtype=np.int64)
    overlaps = pairwise_iou(anchors, gt_boxes)
    best = np.argmax(overlaps, axis=1)
    best_iou = overlaps[np.arange(count), best]
    labels = np.full(count, -1, dtype=np.int64)
    labels[best_iou <= NEGATIVE_IOU] = 0
    labels[best_iou >= POSITIVE_IOU] = 1
    return labels, best


def _require_source(domain: DomainLabel, what: str) -> None:
    if domain is not DomainLabel.SOURCE:
        raise ContractViolationError(f"{what} is defined for source-domain images only, got {domain.tag}")


def _gt_arrays(gts: Sequence[GTInstance]) -> Tuple[np.ndarray, np.ndarray]:
    if not gts:
        return np.zeros((0, 4), dtype=np.float64), np.zeros(0, dtype=np.int64)
    return (np.array([g.box.as_tuple() for g in gts], dtype=np.float64),
            np.array([g.class_id for g in gts], dtype=np.int64))


def rpn_loss(rpn_out: RpnOutput, gts: Sequence[GTInstance],
             domain: DomainLabel = DomainLabel.SOURCE) -> Tensor:
    """
    Mean BCE of sigmoid(objectness) over labelled anchors, plus smooth-L1
    (β = 1) on the deltas of positive anchors summed over coordinates and
    averaged over positives.

    Raises:
        ContractViolationError: called for a target-domain image
    """
    _require_source(domain, "rpn_loss")
    gt_boxes, _ = _gt_arrays(gts)
    labels, matched = label_anchors(rpn_out.anchors, gt_boxes)
    labelled = np.flatnonzero(labels >= 0)
    total = Tensor(0.0)
    if labelled.size:
        probs = ops.sigmoid(ops.take(rpn_out.objectness, labelled))
        total = ops.bce_loss(probs, labels[labelled].astype(np.float64))
    positives = np.flatnonzero(labels == 1)
    if positives.size:
        targets = encode_deltas(rpn_out.anchors[positives], gt_boxes[matched[positives]])
        regression = ops.smooth_l1(ops.take(rpn_out.deltas, positives, axis=0), targets)
        total = ops.add(total, ops.mul(regression, 1.0 / positives.size))
    return total


# ---------------------------------------------------------------------------
# Detection head
# ---------------------------------------------------------------------------

def roi_crop(feature: Tensor, box: Box, size: int, stride: int) -> Tensor:
    """
    size×size×C bilinear samples of `box` (image pixels) taken at bin
    centres on a feature map of the given stride. The box is first clipped
    to the image extent covered by the map.

    Raises:
        EmptyBoxError: the clipped box has zero area
    """
    feat_h, feat_w = feature.shape[:2]
    clipped = box.clipped(feat_w * stride, feat_h * stride)
    return ops.crop_resize(feature, clipped.as_tuple(), size, stride)


class DetectionHead:
    """Flattened RoI features → FC(hidden) + ReLU → class logits (C+1) and box refinement (4)."""

    def __init__(self, num_classes: int, channels: int = 128, roi_size: int = 7, hidden: int = 128,
                 prefix: str = "head"):
        if num_classes < 1 or roi_size < 1 or hidden < 1:
            raise InvalidArgumentError("detection head sizes must be positive")
        self.num_classes = num_classes
        self.channels = channels
        self.roi_size = roi_size
        self.hidden = hidden
        self.prefix = prefix

    @property
    def in_features(self) -> int:
        return self.roi_size * self.roi_size * self.channels

    def register(self, store: ParameterStore) -> None:
        p = self.prefix
        store.create(f"{p}.fc.weight", (self.in_features, self.hidden), init="he", fan_in=self.in_features)
        store.create(f"{p}.fc.bias", (self.hidden,), init="constant")
        store.create(f"{p}.cls.weight", (self.hidden, self.num_classes + 1), init="normal", std=0.01)
        store.create(f"{p}.cls.bias", (self.num_classes + 1,), init="constant")
        store.create(f"{p}.bbox.weight", (self.hidden, 4), init="normal", std=0.001)
        store.create(f"{p}.bbox.bias", (4,), init="constant")

    def forward_flat(self, weights: Weights, flat: Tensor) -> Tuple[Tensor, Tensor]:
        p = self.prefix
        hidden = ops.relu(ops.add(ops.matmul(flat, weights[f"{p}.fc.weight"]), weights[f"{p}.fc.bias"]))
        logits = ops.add(ops.matmul(hidden, weights[f"{p}.cls.weight"]), weights[f"{p}.cls.bias"])
        refinements = ops.add(ops.matmul(hidden, weights[f"{p}.bbox.weight"]), weights[f"{p}.bbox.bias"])
        return logits, refinements

    def forward(self, weights: Weights, feature: Tensor, boxes: np.ndarray,
                stride: int = TOTAL_STRIDE) -> Tuple[Tensor, Tensor]:
        """
        Crop every box from `feature` and run the head.

        Returns:
            (class logits N×(C+1), refinements N×4)
        """
        feat_h, feat_w = feature.shape[:2]
        clipped = clip_boxes(np.asarray(boxes, dtype=np.float64).reshape(-1, 4), feat_w * stride, feat_h * stride)
        pooled = ops.crop_resize_batch(feature, clipped, self.roi_size, stride)
        flat = ops.reshape(pooled, (clipped.shape[0], self.in_features))
        return self.forward_flat(weights, flat)


def det_head(head: DetectionHead, weights: Weights, pooled: Tensor) -> Tuple[Tensor, Tensor]:
    """One pooled S×S×C crop → (class logits (C+1,), refinement (4,))."""
    if pooled.shape != (head.roi_size, head.roi_size, head.channels):
        raise InvalidArgumentError(
            f"pooled crop must be {head.roi_size}x{head.roi_size}x{head.channels}, got {pooled.shape}")
    logits, refinements = head.forward_flat(weights, ops.reshape(pooled, (1, head.in_features)))
    return ops.reshape(logits, (head.num_classes + 1,)), ops.reshape(refinements, (4,))


def assign_detection_targets(boxes: np.ndarray, gts: Sequence[GTInstance],
                             num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per proposal: the class of the best-IoU GT when that IoU ≥ 0.5,
    otherwise the background index `num_classes`.

    Returns:
        (labels, index of the matched GT per proposal)
    """
    gt_boxes, gt_classes = _gt_arrays(gts)
    count = boxes.shape[0]
    if gt_boxes.shape[0] == 0:
        return np.full(count, num_classes, dtype=np.int64), np.zeros(count, dtype=np.int64)
    overlaps = pairwise_iou(boxes, gt_boxes)
    best = np.argmax(overlaps, axis=1)
    foreground = overlaps[np.arange(count), best] >= FOREGROUND_IOU
    return np.where(foreground, gt_classes[best], num_classes), best


def det_loss(class_logits: Tensor, refinements: Tensor, boxes: np.ndarray, gts: Sequence[GTInstance],
             domain: DomainLabel = DomainLabel.SOURCE) -> Tensor:
    """
    Softmax cross-entropy over C+1 classes (mean over proposals) plus
    smooth-L1 on the refinements of foreground proposals, normalised by the
    proposal count.

    Raises:
        ContractViolationError: called for a target-domain image
    """
    _require_source(domain, "det_loss")
    num_classes = class_logits.shape[1] - 1
    labels, matched = assign_detection_targets(boxes, gts, num_classes)
    loss = ops.softmax_cross_entropy(class_logits, labels)
    foreground = np.flatnonzero(labels < num_classes)
    if foreground.size:
        gt_boxes, _ = _gt_arrays(gts)
        targets = encode_deltas(boxes[foreground], gt_boxes[matched[foreground]])
        regression = ops.smooth_l1(ops.take(refinements, foreground, axis=0), targets)
        loss = ops.add(loss, ops.mul(regression, 1.0 / boxes.shape[0]))
    return loss


def refine_boxes(boxes: np.ndarray, refinements: np.ndarray, width: float, height: float) -> np.ndarray:
    """Class-agnostic refinement decode used at inference."""
    return clip_boxes(decode_deltas(boxes, refinements), width, height)
