"""
SA3 - Ablation tests
Variant configurations, the labelled-target upper bound and the multi-seed
comparison between adaptation and its baselines
"""

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from dataclasses import replace

import numpy as np
import pytest

from content.scene_generator import SceneConfig, generate_dataset, generate_scene, labelled_target_scenes
from standards.errors import InvalidArgumentError
from standards.type_definitions import DatasetManifest, DomainLabel, Split
from systems.ablation import KNOWN_VARIANTS, run_ablation, run_variant, variant_configs
from systems.model import ModelConfig
from systems.training import TrainConfig


TINY_MODEL = ModelConfig(num_classes=2, image_size=32, shallow_channels=8, deep_channels=16,
                         proposals=8, roi_size=3, head_hidden=16)
TINY_TRAIN = TrainConfig(base_lr=0.001, lr_milestones=(1,), total_iters=2, batch_per_domain=1)


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate_dataset(SceneConfig(seed=4, num_classes=2, image_size=32, train_per_domain=3, test=2))


@pytest.mark.parametrize("variant", ["oracle", "source_only"])
def test_supervised_only_variants_switch_adaptation_off(variant):
    model_cfg, train_cfg = variant_configs(variant, TINY_MODEL, TINY_TRAIN)
    assert model_cfg.attention == "none"
    assert train_cfg.source_only and train_cfg.attention_mode == "none"
    assert not train_cfg.adapts


@pytest.mark.parametrize("variant", ["cis", "fixed_k", "none", "se"])
def test_attention_variants_keep_adaptation(variant):
    model_cfg, train_cfg = variant_configs(variant, TINY_MODEL, replace(TINY_TRAIN, source_only=True))
    assert model_cfg.attention == variant == train_cfg.attention_mode
    assert not train_cfg.source_only


def test_unknown_variant_is_rejected():
    assert "oracle" in KNOWN_VARIANTS
    with pytest.raises(InvalidArgumentError, match="eca"):
        variant_configs("eca", TINY_MODEL, TINY_TRAIN)


def test_labelled_target_scenes_restore_boxes(tiny_dataset):
    train_set, _ = tiny_dataset
    stored = train_set.by_domain(DomainLabel.TARGET)
    restored = labelled_target_scenes(train_set)
    assert len(restored) == len(stored) == 3
    for record, original in zip(restored, stored):
        assert record.domain is DomainLabel.SOURCE
        assert record.image_id == original.image_id
        np.testing.assert_array_equal(record.image, original.image)
        assert record.instances
        assert record.image_labels == original.image_labels


def test_labelled_target_scenes_match_the_generator(tiny_dataset):
    train_set, _ = tiny_dataset
    first = labelled_target_scenes(train_set)[0]
    again = labelled_target_scenes(train_set)[0]
    assert [i.box.as_tuple() for i in first.instances] == [i.box.as_tuple() for i in again.instances]
    assert [i.class_id for i in first.instances] == [i.class_id for i in again.instances]


def test_labelled_target_scenes_refuse_foreign_images(tiny_dataset):
    train_set, test_set = tiny_dataset
    swapped = generate_scene(99, DomainLabel.TARGET, 32, 32, 2, image_id="train-target-00000")
    records = train_set.by_domain(DomainLabel.SOURCE) + (swapped,) + train_set.by_domain(DomainLabel.TARGET)[1:]
    foreign = DatasetManifest(train_set.class_names, records, train_set.seed, Split.TRAIN, train_set.image_size)
    with pytest.raises(InvalidArgumentError, match="train-target-00000"):
        labelled_target_scenes(foreign)
    with pytest.raises(InvalidArgumentError, match="train split"):
        labelled_target_scenes(test_set)


def test_oracle_run_scores_the_test_split(tiny_dataset):
    train_set, test_set = tiny_dataset
    score = run_variant("oracle", 1, train_set, test_set, TINY_MODEL, TINY_TRAIN)
    assert 0.0 <= score <= 1.0


def test_ablation_rows_follow_variant_order(tiny_dataset):
    train_set, test_set = tiny_dataset
    table = run_ablation(train_set, test_set, TINY_MODEL, TINY_TRAIN, seeds=(1, 2), variants=("source_only", "cis"))
    assert [row.variant for row in table.rows] == ["cis", "source_only"]
    assert all(row.seeds == (1, 2) and len(row.maps) == 2 for row in table.rows)
    assert table.csv_lines()[0] == "variant,mean_map,std_map,runs"
    with pytest.raises(InvalidArgumentError):
        run_ablation(train_set, test_set, TINY_MODEL, TINY_TRAIN, seeds=(1,), variants=("cis", "cis"))
    with pytest.raises(InvalidArgumentError):
        run_ablation(train_set, test_set, TINY_MODEL, TINY_TRAIN, seeds=())


# Reduced-budget run of the default desk benchmark (200 scenes per domain,
# 100 test scenes, three seeds). Takes minutes; select with `pytest -m slow`.
DESK_BUDGET = TrainConfig(total_iters=1000, lr_milestones=(667, 900))


@pytest.mark.slow
def test_adaptation_gains_hold_across_seeds():
    train_set, test_set = generate_dataset(SceneConfig(seed=0), workers=4)
    table = run_ablation(train_set, test_set, ModelConfig(), DESK_BUDGET, seeds=(1, 2, 3),
                         variants=("cis", "none", "source_only"), workers=os.cpu_count() or 1)
    means = {row.variant: row.mean for row in table.rows}
    assert means["cis"] > means["source_only"]
    assert means["cis"] >= means["none"] - 0.01
