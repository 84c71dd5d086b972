"""
SA3 - Image-Level Alignment

Adversarial domain classifiers on both backbone taps and the multi-label
image classifier on the attended deep map.

- local:  GRL → per-pixel 1×1 conv classifier → least-squares vs domain label
- global: GRL → 3×3 conv → GAP → linear → BCE vs domain label
- image:  GAP → linear → sigmoid → BCE vs presence labels (no reversal)

The reversal coefficient is fixed at −1; loss weighting is carried by λ.

Complexity Guarantees:
- local_domain_loss: O(Hs·Ws·Cs·hidden)
- global_domain_loss: O(Hd·Wd·9·Cd·hidden)
- image_multilabel_loss: O(Hd·Wd·Cd + Cd·C)
"""

import logging
from typing import Union

import numpy as np

from core import ops
from core.parameters import ParameterStore, Weights
from core.tensor import Tensor
from standards.errors import InvalidArgumentError
from standards.type_definitions import DomainLabel, ImageLabelVector

logger = logging.getLogger(__name__)


def _maybe_reverse(x: Tensor, reversal: bool) -> Tensor:
    return ops.gradient_reversal(x) if reversal else x


class LocalDomainClassifier:
    """Per-pixel domain score on the shallow tap, as two 1×1 convs (matmuls over pixels)."""

    def __init__(self, channels: int = 32, prefix: str = "aiam.local"):
        self.channels = channels
        self.hidden = max(channels // 2, 1)
        self.prefix = prefix

    def register(self, store: ParameterStore) -> None:
        p = self.prefix
        store.create(f"{p}.conv1.weight", (self.channels, self.hidden), init="he", fan_in=self.channels)
        store.create(f"{p}.conv1.bias", (self.hidden,), init="constant")
        store.create(f"{p}.conv2.weight", (self.hidden, 1), init="normal", std=0.01)
        store.create(f"{p}.conv2.bias", (1,), init="constant")

    def scores(self, weights: Weights, shallow: Tensor, reversal: bool = True) -> Tensor:
        """Sigmoid scores s_ij as an (H·W, 1) column."""
        height, width, channels = shallow.shape
        if channels != self.channels:
            raise InvalidArgumentError(f"local classifier expects {self.channels} channels, got {channels}")
        p = self.prefix
        flat = ops.reshape(_maybe_reverse(shallow, reversal), (height * width, channels))
        hidden = ops.relu(ops.add(ops.matmul(flat, weights[f"{p}.conv1.weight"]), weights[f"{p}.conv1.bias"]))
        return ops.sigmoid(ops.add(ops.matmul(hidden, weights[f"{p}.conv2.weight"]), weights[f"{p}.conv2.bias"]))

    def loss(self, weights: Weights, shallow: Tensor, domain: DomainLabel, reversal: bool = True) -> Tensor:
        """mean over pixels of (s_ij − d)²; lies in [0, 1]."""
        diff = ops.sub(self.scores(weights, shallow, reversal), float(domain))
        return ops.mean(ops.mul(diff, diff))


class GlobalDomainClassifier:
    """Image-level domain logit on the attended deep map."""

    def __init__(self, channels: int = 128, focal_gamma: float = 0.0, prefix: str = "aiam.global"):
        if focal_gamma < 0:
            raise InvalidArgumentError(f"focal_gamma must be ≥ 0, got {focal_gamma}")
        self.channels = channels
        self.hidden = max(channels // 2, 1)
        self.focal_gamma = focal_gamma
        self.prefix = prefix

    def register(self, store: ParameterStore) -> None:
        p = self.prefix
        store.create(f"{p}.conv.weight", (3, 3, self.channels, self.hidden), init="he", fan_in=9 * self.channels)
        store.create(f"{p}.conv.bias", (self.hidden,), init="constant")
        store.create(f"{p}.fc.weight", (self.hidden, 1), init="normal", std=0.01)
        store.create(f"{p}.fc.bias", (1,), init="constant")

    def logit(self, weights: Weights, deep: Tensor, reversal: bool = True) -> Tensor:
        if deep.shape[2] != self.channels:
            raise InvalidArgumentError(f"global classifier expects {self.channels} channels, got {deep.shape[2]}")
        p = self.prefix
        x = ops.conv2d(_maybe_reverse(deep, reversal), weights[f"{p}.conv.weight"], weights[f"{p}.conv.bias"],
                       stride=1, padding=1)
        pooled = ops.reshape(ops.global_avg_pool(ops.relu(x)), (1, self.hidden))
        out = ops.add(ops.matmul(pooled, weights[f"{p}.fc.weight"]), weights[f"{p}.fc.bias"])
        return ops.reshape(out, (1,))

    def loss(self, weights: Weights, deep: Tensor, domain: DomainLabel, reversal: bool = True) -> Tensor:
        """BCE(σ(logit), d); with focal_gamma > 0 the term is scaled by (1 − p_t)^γ."""
        prob = ops.sigmoid(self.logit(weights, deep, reversal))
        target = np.array([float(domain)])
        if self.focal_gamma == 0:
            return ops.bce_loss(prob, target)
        clamped = _clamp_probability(prob)
        p_t = clamped if domain is DomainLabel.TARGET else ops.sub(1.0, clamped)
        weight = ops.power(ops.sub(1.0, p_t), self.focal_gamma)
        return ops.mean(ops.neg(ops.mul(weight, ops.log(p_t))))


def _clamp_probability(p: Tensor) -> Tensor:
    """Affine squeeze into [ε, 1 − ε] so log stays finite on both branches."""
    eps = ops.BCE_EPS
    return ops.add(ops.mul(p, 1.0 - 2.0 * eps), eps)


class ImageClassifier:
    """Multi-label presence classifier on the attended deep map."""

    def __init__(self, num_classes: int, channels: int = 128, prefix: str = "aiam.image"):
        self.num_classes = num_classes
        self.channels = channels
        self.prefix = prefix

    def register(self, store: ParameterStore) -> None:
        store.create(f"{self.prefix}.fc.weight", (self.channels, self.num_classes), init="normal", std=0.01)
        store.create(f"{self.prefix}.fc.bias", (self.num_classes,), init="constant")

    def logits(self, weights: Weights, deep: Tensor) -> Tensor:
        pooled = ops.reshape(ops.global_avg_pool(deep), (1, deep.shape[2]))
        out = ops.add(ops.matmul(pooled, weights[f"{self.prefix}.fc.weight"]), weights[f"{self.prefix}.fc.bias"])
        return ops.reshape(out, (self.num_classes,))

    def loss(self, weights: Weights, deep: Tensor, labels: ImageLabelVector) -> Tensor:
        if len(labels) != self.num_classes:
            raise InvalidArgumentError(f"label vector has {len(labels)} entries, expected {self.num_classes}")
        return ops.bce_loss(ops.sigmoid(self.logits(weights, deep)), labels.as_array())


def local_domain_loss(classifier: LocalDomainClassifier, weights: Weights, shallow: Tensor,
                      domain: DomainLabel, reversal: bool = True) -> Tensor:
    return classifier.loss(weights, shallow, domain, reversal)


def global_domain_loss(classifier: GlobalDomainClassifier, weights: Weights, deep_attended: Tensor,
                       domain: DomainLabel, reversal: bool = True) -> Tensor:
    return classifier.loss(weights, deep_attended, domain, reversal)


def image_multilabel_loss(classifier: ImageClassifier, weights: Weights, deep_attended: Tensor,
                          labels: ImageLabelVector) -> Tensor:
    return classifier.loss(weights, deep_attended, labels)


Scalar = Union[Tensor, float]


def aiam_loss(local: Scalar, global_: Scalar, ic: Scalar, lambda_dc: float, lambda_ic: float) -> Tensor:
    """
    λ_dc·(local + global) + λ_ic·ic.

    Raises:
        InvalidArgumentError: a negative weight
    """
    if lambda_dc < 0 or lambda_ic < 0:
        raise InvalidArgumentError(f"loss weights must be ≥ 0, got λ_dc={lambda_dc}, λ_ic={lambda_ic}")
    return ops.add(ops.mul(ops.add(local, global_), lambda_dc), ops.mul(ic, lambda_ic))
