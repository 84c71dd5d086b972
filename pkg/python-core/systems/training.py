"""
SA3 - Training Loop

Per-domain batching, the weighted total objective
    L = λ_dc·L_dc + λ_ic·L_ic + L_rpn + L_det + λ_cls·L_cls
a step learning-rate schedule, and one SGD-with-momentum update per
iteration.

Each component is the mean of its per-image terms over the images it
applies to: L_rpn and L_det over source images, L_cls over target images,
L_dc and L_ic over all images in the step.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core import ops
from core.parameters import ParameterStore, SGDMomentum, gradients_by_name
from core.tensor import GradTape, Tensor, backward
from standards.errors import InvalidArgumentError, NumericalError
from standards.performance import PerformanceProfiler, profile
from standards.type_definitions import DomainLabel, SceneRecord
from .attention import AttentionMode
from .model import SA3Model

logger = logging.getLogger(__name__)

COMPONENTS = ("rpn", "det", "dc", "ic", "cls")


@dataclass(frozen=True)
class TrainConfig:
    """
    Optimisation hyperparameters.

    Invariants:
    - all λ ≥ 0, base_lr > 0, 0 < lr_factor ≤ 1
    - milestones strictly increasing and < total_iters
    - batch_per_domain ≥ 1
    """
    lambda_dc: float = 1.0
    lambda_ic: float = 0.1
    lambda_cls: float = 1.0
    base_lr: float = 0.005
    lr_milestones: Tuple[int, ...] = (2000, 2700)
    lr_factor: float = 0.1
    total_iters: int = 3000
    batch_per_domain: int = 2
    seed: int = 0
    attention_mode: str = "cis"
    momentum: float = 0.9
    source_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "lr_milestones", tuple(int(m) for m in self.lr_milestones))
        for name in ("lambda_dc", "lambda_ic", "lambda_cls"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise InvalidArgumentError(f"train.{name}: must be a finite value ≥ 0, got {value}")
        if not (self.base_lr > 0 and math.isfinite(self.base_lr)):
            raise InvalidArgumentError(f"train.base_lr: must be > 0, got {self.base_lr}")
        if not 0 < self.lr_factor <= 1:
            raise InvalidArgumentError(f"train.lr_factor: must be in (0, 1], got {self.lr_factor}")
        if self.total_iters < 1:
            raise InvalidArgumentError(f"train.total_iters: must be ≥ 1, got {self.total_iters}")
        milestones = self.lr_milestones
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise InvalidArgumentError(f"train.lr_milestones: must be strictly increasing, got {list(milestones)}")
        if milestones and (milestones[0] < 0 or milestones[-1] >= self.total_iters):
            raise InvalidArgumentError(
                f"train.lr_milestones: must lie in [0, {self.total_iters}), got {list(milestones)}")
        if self.batch_per_domain < 1:
            raise InvalidArgumentError(f"train.batch_per_domain: must be ≥ 1, got {self.batch_per_domain}")
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError(f"train.momentum: must be in [0, 1), got {self.momentum}")
        AttentionMode.parse(self.attention_mode)

    @property
    def adapts(self) -> bool:
        return not self.source_only

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["lr_milestones"] = list(self.lr_milestones)
        return data


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """base_lr · lr_factor^(number of milestones ≤ iteration)."""
    passed = sum(1 for m in cfg.lr_milestones if m <= iteration)
    return cfg.base_lr * cfg.lr_factor ** passed


@dataclass(frozen=True)
class LossBreakdown:
    """Component losses of one step and the learning rate used."""
    iteration: int
    lr: float
    rpn: float
    det: float
    dc: float
    ic: float
    cls: float
    total: float

    def metrics_line(self) -> Dict[str, Any]:
        return {
            "iter": self.iteration + 1,
            "lr": self.lr,
            "loss_total": self.total,
            "loss_rpn": self.rpn,
            "loss_det": self.det,
            "loss_dc": self.dc,
            "loss_ic": self.ic,
            "loss_cls": self.cls,
        }


def _mean_term(terms: Sequence[Optional[Tensor]]) -> Optional[Tensor]:
    present = [t for t in terms if t is not None]
    if not present:
        return None
    return ops.mul(ops.sum(ops.stack(present)), 1.0 / len(present))


def _value(term: Optional[Tensor]) -> float:
    return 0.0 if term is None else term.item()


def _weighted(term: Optional[Tensor], weight: float) -> Optional[Tensor]:
    return None if term is None else ops.mul(term, weight)


def total_loss(components: Mapping[str, Optional[Tensor]], cfg: TrainConfig) -> Tensor:
    """λ_dc·L_dc + λ_ic·L_ic + L_rpn + L_det + λ_cls·L_cls, added in that order."""
    ordered = [
        _weighted(components["dc"], cfg.lambda_dc),
        _weighted(components["ic"], cfg.lambda_ic),
        components["rpn"],
        components["det"],
        _weighted(components["cls"], cfg.lambda_cls),
    ]
    total: Optional[Tensor] = None
    for term in ordered:
        if term is not None:
            total = term if total is None else ops.add(total, term)
    if total is None:
        raise InvalidArgumentError("no loss term applies to this batch")
    return total


@profile("train_step")
def train_step(batch_source: Sequence[SceneRecord], batch_target: Sequence[SceneRecord], model: SA3Model,
               store: ParameterStore, optimizer: SGDMomentum, cfg: TrainConfig,
               iteration: int = 0) -> LossBreakdown:
    """
    One forward/backward pass over a two-domain batch and one parameter update.

    Raises:
        InvalidArgumentError: an empty domain side or mislabelled records
        NumericalError: a non-finite loss component (parameters untouched)
    """
    if not batch_source or not batch_target:
        raise InvalidArgumentError("a training step needs at least one image from each domain")
    for rec in batch_source:
        if rec.domain is not DomainLabel.SOURCE:
            raise InvalidArgumentError(f"{rec.image_id} is not a source-domain record")
    for rec in batch_target:
        if rec.domain is not DomainLabel.TARGET:
            raise InvalidArgumentError(f"{rec.image_id} is not a target-domain record")

    lr = lr_at(iteration, cfg)
    weights = store.bind()
    with GradTape():
        per_image = [model.image_terms(weights, rec, adapt=cfg.adapts)
                     for rec in list(batch_source) + list(batch_target)]
        components = {name: _mean_term([getattr(t, name) for t in per_image]) for name in COMPONENTS}
        for name, term in components.items():
            if term is not None and not math.isfinite(term.item()):
                raise NumericalError(f"loss_{name}", term.item(), iteration)
        total = total_loss(components, cfg)
    if not math.isfinite(total.item()):
        raise NumericalError("loss_total", total.item(), iteration)
    grads = gradients_by_name(weights, backward(total))
    optimizer.step(store, grads, lr)
    return LossBreakdown(iteration, lr, *(_value(components[name]) for name in COMPONENTS), total.item())


@dataclass
class TrainResult:
    store: ParameterStore
    history: List[LossBreakdown] = field(default_factory=list)


class Trainer:
    """
    Runs total_iters steps with a seeded batch sampler.

    The sampler draws the source and target batches from one generator in
    the same order regardless of which loss terms are active, so runs that
    differ only in loss weights see identical data.
    """

    def __init__(self, model: SA3Model, cfg: TrainConfig, store: Optional[ParameterStore] = None):
        self.model = model
        self.cfg = cfg
        self.store = store if store is not None else model.init_parameters(cfg.seed)
        self.optimizer = SGDMomentum(cfg.momentum)
        self._sampler = np.random.default_rng([cfg.seed, 0x5A3])

    def sample(self, records: Sequence[SceneRecord]) -> List[SceneRecord]:
        if len(records) < self.cfg.batch_per_domain:
            raise InvalidArgumentError(
                f"batch_per_domain={self.cfg.batch_per_domain} exceeds the {len(records)} available records")
        picks = self._sampler.choice(len(records), size=self.cfg.batch_per_domain, replace=False)
        return [records[int(i)] for i in picks]

    def run(self, source: Sequence[SceneRecord], target: Sequence[SceneRecord],
            metrics_path: Optional[Path] = None, log_interval: int = 50,
            on_step: Optional[Callable[[LossBreakdown], None]] = None) -> TrainResult:
        """
        Train for cfg.total_iters iterations.

        A metrics JSON line is appended every `log_interval` iterations,
        at iterations where (iter + 1) % log_interval == 0.
        """
        if not source or not target:
            raise InvalidArgumentError("training needs records from both domains")
        if log_interval < 1:
            raise InvalidArgumentError(f"log_interval must be ≥ 1, got {log_interval}")
        result = TrainResult(self.store)
        handle = open(metrics_path, "w", encoding="utf-8") if metrics_path is not None else None
        try:
            for iteration in range(self.cfg.total_iters):
                batch_source = self.sample(source)
                batch_target = self.sample(target)
                breakdown = train_step(batch_source, batch_target, self.model, self.store,
                                       self.optimizer, self.cfg, iteration)
                result.history.append(breakdown)
                if on_step is not None:
                    on_step(breakdown)
                if (iteration + 1) % log_interval == 0:
                    logger.info("iter %d/%d lr=%.5g total=%.4f rpn=%.4f det=%.4f dc=%.4f ic=%.4f cls=%.4f",
                                iteration + 1, self.cfg.total_iters, breakdown.lr, breakdown.total,
                                breakdown.rpn, breakdown.det, breakdown.dc, breakdown.ic, breakdown.cls)
                    if handle is not None:
                        handle.write(json.dumps(breakdown.metrics_line(), sort_keys=True) + "\n")
        finally:
            if handle is not None:
                handle.close()
        metrics = PerformanceProfiler.get_metrics("train_step")
        if metrics is not None:
            logger.debug("%s", metrics)
        return result
