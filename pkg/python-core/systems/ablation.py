"""
SA3 - Attention Ablation

Trains each attention variant once per seed on the same data, evaluates
on the target test split and tabulates mean ± std mAP per variant.

Variants:
- none, fixed_k, cis, se: full adaptation with that channel gate
- source_only: no adaptation branches (lower bound)
- oracle: source-only training on the target train scenes with their
  boxes restored (upper bound)

Seed runs are independent and may run in worker processes.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from content.scene_generator import labelled_target_scenes
from standards.errors import InvalidArgumentError
from standards.type_definitions import DatasetManifest, DomainLabel
from .evaluation import evaluate
from .model import ModelConfig, SA3Model
from .training import TrainConfig, Trainer

logger = logging.getLogger(__name__)

DEFAULT_VARIANTS = ("cis", "fixed_k", "none")
KNOWN_VARIANTS = ("cis", "fixed_k", "none", "oracle", "se", "source_only")
SUPERVISED_ONLY = ("oracle", "source_only")


def variant_configs(variant: str, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Tuple[ModelConfig, TrainConfig]:
    if variant not in KNOWN_VARIANTS:
        raise InvalidArgumentError(f"unknown ablation variant '{variant}' (known: {', '.join(KNOWN_VARIANTS)})")
    if variant in SUPERVISED_ONLY:
        return replace(model_cfg, attention="none"), replace(train_cfg, attention_mode="none", source_only=True)
    return replace(model_cfg, attention=variant), replace(train_cfg, attention_mode=variant, source_only=False)


def run_variant(variant: str, seed: int, train_set: DatasetManifest, test_set: DatasetManifest,
                model_cfg: ModelConfig, train_cfg: TrainConfig, eval_workers: int = 1) -> float:
    """Train one variant with one seed and return its test mAP."""
    model_cfg, train_cfg = variant_configs(variant, model_cfg, replace(train_cfg, seed=seed))
    model = SA3Model(model_cfg)
    trainer = Trainer(model, train_cfg)
    if variant == "oracle":
        labelled = labelled_target_scenes(train_set)
    else:
        labelled = train_set.by_domain(DomainLabel.SOURCE)
    result = trainer.run(labelled, train_set.by_domain(DomainLabel.TARGET),
                         log_interval=max(1, train_cfg.total_iters))
    report = evaluate(model, result.store, test_set, workers=eval_workers)
    logger.info("ablation %s seed %d: mAP %.4f", variant, seed, report.map)
    return report.map


def _run_job(job: Tuple[str, int, DatasetManifest, DatasetManifest, ModelConfig, TrainConfig]) -> float:
    return run_variant(*job)


@dataclass(frozen=True)
class AblationRow:
    variant: str
    seeds: Tuple[int, ...]
    maps: Tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.maps))

    @property
    def std(self) -> float:
        return float(np.std(self.maps, ddof=0))


@dataclass(frozen=True)
class AblationTable:
    """Rows sorted by variant name."""
    rows: Tuple[AblationRow, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "variants": [
                {"variant": r.variant, "seeds": list(r.seeds), "map": list(r.maps),
                 "mean_map": r.mean, "std_map": r.std}
                for r in self.rows
            ]
        }

    def csv_lines(self) -> List[str]:
        lines = ["variant,mean_map,std_map,runs"]
        lines.extend(f"{r.variant},{r.mean:.6f},{r.std:.6f},{len(r.maps)}" for r in self.rows)
        return lines


def run_ablation(train_set: DatasetManifest, test_set: DatasetManifest, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, seeds: Sequence[int], variants: Sequence[str] = DEFAULT_VARIANTS,
                 workers: int = 1) -> AblationTable:
    """
    Every variant × seed run, tabulated.

    Raises:
        InvalidArgumentError: no seeds, duplicate or unknown variants
    """
    if len(seeds) < 1:
        raise InvalidArgumentError("ablation needs at least one seed")
    if len(set(variants)) != len(variants):
        raise InvalidArgumentError(f"duplicate ablation variants: {list(variants)}")
    ordered = sorted(variants)
    for variant in ordered:
        variant_configs(variant, model_cfg, train_cfg)
    jobs = [(v, int(s), train_set, test_set, model_cfg, train_cfg) for v in ordered for s in seeds]
    logger.info("ablation: %d variants × %d seeds", len(ordered), len(seeds))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            maps = list(pool.map(_run_job, jobs))
    else:
        maps = [_run_job(job) for job in jobs]
    rows = []
    for i, variant in enumerate(ordered):
        chunk = maps[i * len(seeds):(i + 1) * len(seeds)]
        rows.append(AblationRow(variant, tuple(int(s) for s in seeds), tuple(chunk)))
    return AblationTable(tuple(rows))
