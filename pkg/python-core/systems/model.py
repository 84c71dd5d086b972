"""
SA3 - Model Assembly

Wires backbone, RPN, detection head, channel attention, domain
classifiers and the image classifier into one model whose parameters
live in a single ParameterStore, and computes the per-image loss terms
of the total training objective.

Data flow per image:
    image → backbone → (shallow, deep)
    deep  → RPN → top-N proposals → RoI head         (raw deep features)
    deep  → attention → global classifier, image classifier
    shallow → local classifier
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from core import ops
from core.parameters import ParameterStore, Weights
from core.tensor import Tensor
from standards.errors import InvalidArgumentError
from standards.type_definitions import Box, Detection, DomainLabel, SceneRecord
from .alignment import GlobalDomainClassifier, ImageClassifier, LocalDomainClassifier
from .attention import AttentionMode, ChannelAttention, CisConfig
from .detector import (
    TOTAL_STRIDE,
    Backbone,
    DetectionHead,
    FeaturePair,
    ProposalSet,
    RegionProposalNetwork,
    det_loss,
    nms,
    refine_boxes,
    rpn_loss,
)
from .transformation import ImagePrediction, aggregate_image_prediction, build_objectness_matrix, i2itm_loss

logger = logging.getLogger(__name__)


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture hyperparameters.

    Invariants:
    - num_classes ≥ 2, image_size divisible by 16
    - channel counts are powers of two ≥ 2
    """
    num_classes: int = 3
    image_size: int = 64
    shallow_channels: int = 32
    deep_channels: int = 128
    proposals: int = 32
    roi_size: int = 7
    head_hidden: int = 128
    attention: str = "cis"
    gamma: int = 2
    b: int = 1
    focal_gamma: float = 0.0

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidArgumentError(f"model.num_classes: at least 2 classes are required, got {self.num_classes}")
        if self.image_size < TOTAL_STRIDE or self.image_size % TOTAL_STRIDE:
            raise InvalidArgumentError(f"model.image_size: must be a positive multiple of {TOTAL_STRIDE}, "
                                       f"got {self.image_size}")
        for name in ("shallow_channels", "deep_channels"):
            if not _is_power_of_two(getattr(self, name)):
                raise InvalidArgumentError(f"model.{name}: must be a power of two ≥ 2, got {getattr(self, name)}")
        for name in ("proposals", "roi_size", "head_hidden", "gamma"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"model.{name}: must be ≥ 1, got {getattr(self, name)}")
        if self.focal_gamma < 0:
            raise InvalidArgumentError(f"model.focal_gamma: must be ≥ 0, got {self.focal_gamma}")
        AttentionMode.parse(self.attention)

    @property
    def attention_mode(self) -> AttentionMode:
        return AttentionMode.parse(self.attention)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @staticmethod
    def from_dict(data: Mapping[str, Any]) -> 'ModelConfig':
        known = set(ModelConfig.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidArgumentError(f"unknown model config keys: {unknown}")
        return ModelConfig(**dict(data))


@dataclass
class ImageLossTerms:
    """Loss terms of one image; a term is None when it does not apply to the image's domain."""
    domain: DomainLabel
    rpn: Optional[Tensor] = None
    det: Optional[Tensor] = None
    dc: Optional[Tensor] = None
    ic: Optional[Tensor] = None
    cls: Optional[Tensor] = None
    extras: Dict[str, float] = field(default_factory=dict)


class SA3Model:
    """
    The detector plus its adaptation branches.

    Usage:
        model = SA3Model(ModelConfig(num_classes=3))
        store = model.init_parameters(seed=0)
        with GradTape():
            terms = model.image_terms(store.bind(), record, adapt=True)
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.backbone = Backbone(config.shallow_channels, config.deep_channels)
        self.rpn = RegionProposalNetwork(config.deep_channels)
        self.head = DetectionHead(config.num_classes, config.deep_channels, config.roi_size, config.head_hidden)
        self.attention = ChannelAttention(
            CisConfig(config.deep_channels, config.gamma, config.b, config.attention_mode))
        self.local_classifier = LocalDomainClassifier(config.shallow_channels)
        self.global_classifier = GlobalDomainClassifier(config.deep_channels, config.focal_gamma)
        self.image_classifier = ImageClassifier(config.num_classes, config.deep_channels)

    def components(self) -> List[Any]:
        return [self.backbone, self.rpn, self.head, self.attention,
                self.local_classifier, self.global_classifier, self.image_classifier]

    def init_parameters(self, seed: int) -> ParameterStore:
        store = ParameterStore(seed)
        for component in self.components():
            component.register(store)
        logger.debug("initialised %d parameter tensors (seed %d)", len(store), seed)
        return store

    # -- forward pieces ------------------------------------------------------

    def _check_record(self, record: SceneRecord) -> None:
        size = self.config.image_size
        if record.height != size or record.width != size:
            raise InvalidArgumentError(f"{record.image_id}: model expects {size}x{size} images, "
                                       f"got {record.height}x{record.width}")
        if len(record.image_labels) != self.config.num_classes:
            raise InvalidArgumentError(f"{record.image_id}: model expects {self.config.num_classes} classes")

    def features(self, weights: Weights, record: SceneRecord) -> FeaturePair:
        self._check_record(record)
        return self.backbone.forward(weights, Tensor(record.pixels()))

    def proposals(self, weights: Weights, deep: Tensor) -> ProposalSet:
        size = self.config.image_size
        rpn_out = self.rpn.head(weights, deep)
        proposals = self.rpn.propose(rpn_out, self.config.proposals, size, size)
        logits, refinements = self.head.forward(weights, deep, proposals.boxes)
        return proposals.with_head(logits, refinements)

    def image_prediction(self, weights: Weights, proposals: ProposalSet) -> ImagePrediction:
        x_bar = proposals.foreground_logits()
        objectness = build_objectness_matrix(proposals.objectness, x_bar)
        return aggregate_image_prediction(x_bar, objectness)

    # -- per-image losses ------------------------------------------------------

    def _alignment_terms(self, weights: Weights, feats: FeaturePair, record: SceneRecord,
                         terms: ImageLossTerms) -> None:
        attended, _ = self.attention.forward(weights, feats.deep)
        local = self.local_classifier.loss(weights, feats.shallow, record.domain)
        global_ = self.global_classifier.loss(weights, attended, record.domain)
        terms.dc = ops.add(local, global_)
        terms.ic = self.image_classifier.loss(weights, attended, record.image_labels)

    def image_terms(self, weights: Weights, record: SceneRecord, adapt: bool = True) -> ImageLossTerms:
        """
        Loss terms for one image.

        Source images give L_rpn and L_det; target images give L_cls. With
        `adapt`, both domains also give L_dc and L_ic. Without it, target
        images give nothing.
        """
        terms = ImageLossTerms(record.domain)
        if record.domain is DomainLabel.TARGET and not adapt:
            return terms
        feats = self.features(weights, record)
        size = self.config.image_size
        rpn_out = self.rpn.head(weights, feats.deep)
        proposals = self.rpn.propose(rpn_out, self.config.proposals, size, size)

        if record.domain is DomainLabel.SOURCE:
            terms.rpn = rpn_loss(rpn_out, record.instances, record.domain)
            boxes = np.concatenate([proposals.boxes, record.boxes_array()], axis=0)
            logits, refinements = self.head.forward(weights, feats.deep, boxes)
            terms.det = det_loss(logits, refinements, boxes, record.instances, record.domain)
        else:
            logits, refinements = self.head.forward(weights, feats.deep, proposals.boxes)
            prediction = self.image_prediction(weights, proposals.with_head(logits, refinements))
            terms.cls = i2itm_loss(prediction, record.image_labels, record.domain)

        if adapt:
            self._alignment_terms(weights, feats, record, terms)
        return terms

    # -- inference -------------------------------------------------------------

    def detect(self, weights: Weights, record: SceneRecord, score_threshold: float = 0.05,
               nms_iou: float = 0.5) -> List[Detection]:
        """
        Class-wise detections for one image: softmax scores, class-agnostic
        refinement, score threshold, then greedy NMS per class.
        """
        feats = self.features(weights, record)
        proposals = self.proposals(weights, feats.deep)
        logits = proposals.class_logits.data
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        size = self.config.image_size
        boxes = refine_boxes(proposals.boxes, proposals.box_refinements.data, size, size)
        detections: List[Detection] = []
        for class_id in range(self.config.num_classes):
            scores = probs[:, class_id]
            candidates = np.flatnonzero(scores >= score_threshold)
            if candidates.size == 0:
                continue
            for idx in candidates[nms(boxes[candidates], scores[candidates], nms_iou)]:
                detections.append(Detection(record.image_id, class_id, float(scores[idx]),
                                            Box.from_sequence(boxes[idx]), order=len(detections)))
        return detections

    def predict_labels(self, weights: Weights, record: SceneRecord) -> np.ndarray:
        """Image-level probabilities P from the instance-to-image aggregation."""
        feats = self.features(weights, record)
        return self.image_prediction(weights, self.proposals(weights, feats.deep)).values()
