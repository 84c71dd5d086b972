"""
SA3 - Synthetic Two-Domain Scene Generator

Source ("photo"):  gradient background, filled shapes, Gaussian pixel noise
Target ("cartoon"): dark flat background, 2 px outlines, global hue shift

Both domains draw object layouts from the same distribution, so class
frequencies match and only the rendering style differs. Every record is a
pure function of its derived seed: record_seed = mix(mix(seed, stream), index).

Complexity Guarantees:
- generate_scene: O(W·H) pixels plus O(k²) placement checks for k ≤ 4 objects
- generate_dataset: O(records) scenes, independent and order-preserving
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image, ImageDraw

from graphics.color_palette import ColorPalette
from graphics.shape_renderer import SHAPE_NAMES, ShapeRenderer
from standards.errors import InvalidArgumentError
from standards.formal_specs import verify_complexity
from standards.type_definitions import (
    Box, DatasetManifest, DomainLabel, GTInstance, ImageLabelVector, SceneRecord, Split,
)
from systems.detector import iou
from .rng import Lcg, mix

logger = logging.getLogger(__name__)

MIN_SIDE = 12
MAX_SIDE = 32
MAX_OBJECTS = 4
PLACEMENT_ATTEMPTS = 100
MAX_PAIR_IOU = 0.2
NOISE_SIGMA = 0.05
HUE_SHIFT_RANGE = (64, 192)

# independent seed streams per split/domain
STREAM_TRAIN_SOURCE = 0
STREAM_TRAIN_TARGET = 1
STREAM_TEST_TARGET = 2


def class_names(num_classes: int) -> Tuple[str, ...]:
    if not 2 <= num_classes <= len(SHAPE_NAMES):
        raise InvalidArgumentError(f"classes must be in 2..{len(SHAPE_NAMES)}, got {num_classes}")
    return SHAPE_NAMES[:num_classes]


@dataclass(frozen=True)
class SceneConfig:
    """
    Benchmark size and seed.

    Invariants:
    - 2 ≤ num_classes ≤ 6
    - image_size divisible by 16 and ≥ MAX_SIDE
    - at least one record per split
    """
    seed: int = 0
    num_classes: int = 3
    image_size: int = 64
    train_per_domain: int = 200
    test: int = 100

    def __post_init__(self):
        class_names(self.num_classes)
        if self.image_size % 16 != 0 or self.image_size < MAX_SIDE:
            raise InvalidArgumentError(
                f"data.image_size: must be a multiple of 16 and ≥ {MAX_SIDE}, got {self.image_size}")
        if self.train_per_domain < 1:
            raise InvalidArgumentError(f"data.train_per_domain: must be ≥ 1, got {self.train_per_domain}")
        if self.test < 1:
            raise InvalidArgumentError(f"data.test: must be ≥ 1, got {self.test}")


def place_instances(rng: Lcg, width: int, height: int, num_classes: int) -> List[GTInstance]:
    """
    1-4 square boxes with side 12-32 and pairwise IoU < 0.2.

    An object that cannot be placed within PLACEMENT_ATTEMPTS draws is
    dropped; the first object always fits.
    """
    wanted = rng.randint(1, MAX_OBJECTS)
    largest = min(MAX_SIDE, width, height)
    placed: List[GTInstance] = []
    for _ in range(wanted):
        for _attempt in range(PLACEMENT_ATTEMPTS):
            side = rng.randint(MIN_SIDE, largest)
            x1 = rng.randint(0, width - side)
            y1 = rng.randint(0, height - side)
            box = Box(float(x1), float(y1), float(x1 + side), float(y1 + side))
            if all(iou(box, other.box) < MAX_PAIR_IOU for other in placed):
                placed.append(GTInstance(box, rng.choice(num_classes)))
                break
    return placed


def _int_box(box: Box) -> Tuple[int, int, int, int]:
    return int(box.x1), int(box.y1), int(box.x2), int(box.y2)


def render_source(rng: Lcg, instances: List[GTInstance], width: int, height: int) -> np.ndarray:
    top = ColorPalette.pick(ColorPalette.SOURCE_BACKGROUNDS, rng.next_u32())
    bottom = ColorPalette.pick(ColorPalette.SOURCE_BACKGROUNDS, rng.next_u32())
    canvas = Image.fromarray(ColorPalette.vertical_gradient(top, bottom, width, height))
    draw = ImageDraw.Draw(canvas)
    renderer = ShapeRenderer()
    for inst in instances:
        color = ColorPalette.pick(ColorPalette.SOURCE_FILLS, rng.next_u32())
        renderer.draw(draw, SHAPE_NAMES[inst.class_id], _int_box(inst.box), color, filled=True)
    pixels = np.asarray(canvas, dtype=np.float64) / 255.0
    noise = rng.gaussian_block(height * width * 3).reshape(height, width, 3)
    noisy = np.clip(pixels + NOISE_SIGMA * noise, 0.0, 1.0)
    return np.rint(noisy * 255.0).astype(np.uint8)


def render_target(rng: Lcg, instances: List[GTInstance], width: int, height: int) -> np.ndarray:
    background = ColorPalette.pick(ColorPalette.TARGET_BACKGROUNDS, rng.next_u32())
    canvas = Image.new("RGB", (width, height), background)
    draw = ImageDraw.Draw(canvas)
    renderer = ShapeRenderer()
    for inst in instances:
        color = ColorPalette.pick(ColorPalette.TARGET_STROKES, rng.next_u32())
        renderer.draw(draw, SHAPE_NAMES[inst.class_id], _int_box(inst.box), color, filled=False)
    shifted = ColorPalette.hue_shift(canvas, rng.randint(*HUE_SHIFT_RANGE))
    return np.array(shifted, dtype=np.uint8)


@verify_complexity(time="O(n)", space="O(n)", description="n = W·H pixels of one scene")
def generate_scene(seed: int, domain: DomainLabel, width: int = 64, height: int = 64, num_classes: int = 3,
                   keep_instances: Optional[bool] = None, image_id: Optional[str] = None) -> SceneRecord:
    """
    Render one scene in the style of `domain`.

    Args:
        keep_instances: keep the instance boxes on the record; defaults to
            True for source and False for target (image labels only)

    Raises:
        InvalidArgumentError: dimensions not divisible by 16 or too small,
            num_classes outside 2..6
    """
    class_names(num_classes)
    if width % 16 or height % 16 or min(width, height) < MAX_SIDE:
        raise InvalidArgumentError(f"scene size must be multiples of 16 and ≥ {MAX_SIDE}, got {width}x{height}")
    rng = Lcg(seed)
    instances = place_instances(rng, width, height, num_classes)
    if domain is DomainLabel.SOURCE:
        image = render_source(rng, instances, width, height)
    else:
        image = render_target(rng, instances, width, height)
    labels = ImageLabelVector.from_classes((i.class_id for i in instances), num_classes)
    keep = domain is DomainLabel.SOURCE if keep_instances is None else keep_instances
    return SceneRecord(
        image_id=image_id if image_id is not None else f"{domain.tag}-{seed:016x}",
        domain=domain,
        image=image,
        instances=tuple(instances) if keep else (),
        image_labels=labels,
    )


def generate_split(cfg: SceneConfig, split: Split, domain: DomainLabel, stream: int, count: int,
                   keep_instances: bool, workers: int = 1) -> Tuple[SceneRecord, ...]:
    """`count` records of one domain, in index order."""
    stream_seed = mix(cfg.seed, stream)

    def build(index: int) -> SceneRecord:
        return generate_scene(mix(stream_seed, index), domain, cfg.image_size, cfg.image_size, cfg.num_classes,
                              keep_instances=keep_instances,
                              image_id=f"{split.value}-{domain.tag}-{index:05d}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return tuple(pool.map(build, range(count)))
    return tuple(build(i) for i in range(count))


def generate_dataset(cfg: SceneConfig, workers: int = 1) -> Tuple[DatasetManifest, DatasetManifest]:
    """
    Train split (labelled source + image-labelled target) and test split
    (target scenes with boxes, for evaluation only).
    """
    names = class_names(cfg.num_classes)
    source = generate_split(cfg, Split.TRAIN, DomainLabel.SOURCE, STREAM_TRAIN_SOURCE,
                            cfg.train_per_domain, keep_instances=True, workers=workers)
    target = generate_split(cfg, Split.TRAIN, DomainLabel.TARGET, STREAM_TRAIN_TARGET,
                            cfg.train_per_domain, keep_instances=False, workers=workers)
    test = generate_split(cfg, Split.TEST, DomainLabel.TARGET, STREAM_TEST_TARGET,
                          cfg.test, keep_instances=True, workers=workers)
    train_manifest = DatasetManifest(names, source + target, cfg.seed, Split.TRAIN, cfg.image_size)
    test_manifest = DatasetManifest(names, test, cfg.seed, Split.TEST, cfg.image_size)
    logger.info("generated %d source + %d target train scenes, %d test scenes (seed %d)",
                len(source), len(target), len(test), cfg.seed)
    return train_manifest, test_manifest


def labelled_target_scenes(train_set: DatasetManifest) -> Tuple[SceneRecord, ...]:
    """
    The train split's target scenes with their boxes restored, relabelled as
    the supervised domain so the detection losses accept them.

    Boxes are recovered by regenerating each scene from the manifest seed;
    records are matched by position within the target stream.

    Raises:
        InvalidArgumentError: not a train split, or a regenerated image
            differs from the stored one
    """
    if train_set.split is not Split.TRAIN:
        raise InvalidArgumentError(f"labelled target scenes come from the train split, got {train_set.split.value}")
    stream_seed = mix(train_set.seed, STREAM_TRAIN_TARGET)
    restored = []
    for index, stored in enumerate(train_set.by_domain(DomainLabel.TARGET)):
        scene = generate_scene(mix(stream_seed, index), DomainLabel.TARGET, train_set.image_size,
                               train_set.image_size, train_set.num_classes, keep_instances=True)
        if not np.array_equal(scene.image, stored.image):
            raise InvalidArgumentError(f"{stored.image_id}: cannot restore boxes, image was not generated "
                                       f"from seed {train_set.seed}")
        restored.append(SceneRecord(stored.image_id, DomainLabel.SOURCE, stored.image, scene.instances,
                                    scene.image_labels))
    return tuple(restored)
