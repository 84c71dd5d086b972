"""
Type-Safe Data Structures

Frozen dataclasses for the detection geometry and dataset records shared
by every subsystem. Invariants are enforced in __post_init__ so an invalid
value never exists.

Mathematical Properties:
- Boxes are half-open pixel rectangles [x1, x2) × [y1, y2), origin top-left
- O(1) access to all fields
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Tuple, Iterable, Sequence

import numpy as np

from .errors import InvalidArgumentError, EmptyBoxError


class DomainLabel(IntEnum):
    """Domain of an image; the integer value is the domain classifier target."""
    SOURCE = 0
    TARGET = 1

    @classmethod
    def parse(cls, name: str) -> 'DomainLabel':
        try:
            return cls[name.upper()]
        except KeyError:
            raise InvalidArgumentError(f"unknown domain '{name}'") from None

    @property
    def tag(self) -> str:
        return self.name.lower()


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class Box:
    """
    Axis-aligned box in image pixel coordinates.

    Invariants:
    - x1 < x2 and y1 < y2

    Complexity: O(1) creation and access
    """
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidArgumentError(
                f"box requires x1 < x2 and y1 < y2, got [{self.x1}, {self.y1}, {self.x2}, {self.y2}]")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def clipped(self, width: float, height: float) -> 'Box':
        """Clip to [0, width] × [0, height]; a zero-area result raises EmptyBoxError."""
        x1 = min(max(self.x1, 0.0), width)
        y1 = min(max(self.y1, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        if not (x1 < x2 and y1 < y2):
            raise EmptyBoxError(f"box {self.as_tuple()} is empty after clipping to {width}x{height}")
        return Box(x1, y1, x2, y2)

    def inside(self, width: float, height: float) -> bool:
        return self.x1 >= 0 and self.y1 >= 0 and self.x2 <= width and self.y2 <= height

    @staticmethod
    def from_sequence(values: Sequence[float]) -> 'Box':
        if len(values) != 4:
            raise InvalidArgumentError(f"box needs 4 coordinates, got {len(values)}")
        return Box(*(float(v) for v in values))


@dataclass(frozen=True)
class GTInstance:
    """Ground-truth object: a box and its class index (source domain only during training)."""
    box: Box
    class_id: int

    def __post_init__(self):
        if self.class_id < 0:
            raise InvalidArgumentError(f"class_id must be ≥ 0, got {self.class_id}")


@dataclass(frozen=True)
class ImageLabelVector:
    """
    Image-level presence labels y ∈ {0,1}^C.

    An all-zero vector is representable (losses accept it); the scene
    generator never produces one.
    """
    labels: Tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) < 1:
            raise InvalidArgumentError("label vector must not be empty")
        if any(v not in (0, 1) for v in self.labels):
            raise InvalidArgumentError(f"labels must be 0/1, got {self.labels}")

    @staticmethod
    def from_classes(class_ids: Iterable[int], num_classes: int) -> 'ImageLabelVector':
        present = set(class_ids)
        if any(c < 0 or c >= num_classes for c in present):
            raise InvalidArgumentError(f"class ids {sorted(present)} outside 0..{num_classes - 1}")
        return ImageLabelVector(tuple(1 if c in present else 0 for c in range(num_classes)))

    def __len__(self) -> int:
        return len(self.labels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=np.float64)

    def positives(self) -> Tuple[int, ...]:
        return tuple(c for c, v in enumerate(self.labels) if v == 1)


@dataclass(frozen=True, eq=False)
class SceneRecord:
    """
    One synthetic image with its annotations.

    Invariants:
    - image is uint8 H×W×3 (values k/255 in [0,1] through pixels())
    - every instance box lies inside the image
    - on source records, image_labels equals the set of instance classes
    """
    image_id: str
    domain: DomainLabel
    image: np.ndarray
    instances: Tuple[GTInstance, ...]
    image_labels: ImageLabelVector

    def __post_init__(self):
        if self.image.dtype != np.uint8 or self.image.ndim != 3 or self.image.shape[2] != 3:
            raise InvalidArgumentError(
                f"{self.image_id}: image must be uint8 H×W×3, got {self.image.dtype} {self.image.shape}")
        height, width = self.image.shape[:2]
        for inst in self.instances:
            if not inst.box.inside(width, height):
                raise InvalidArgumentError(f"{self.image_id}: box {inst.box.as_tuple()} outside image")
            if inst.class_id >= len(self.image_labels):
                raise InvalidArgumentError(f"{self.image_id}: class {inst.class_id} outside label range")
        if self.domain is DomainLabel.SOURCE:
            expected = ImageLabelVector.from_classes((i.class_id for i in self.instances),
                                                     len(self.image_labels))
            if expected != self.image_labels:
                raise InvalidArgumentError(
                    f"{self.image_id}: image labels {self.image_labels.labels} disagree with instances")

    @property
    def height(self) -> int:
        return int(self.image.shape[0])

    @property
    def width(self) -> int:
        return int(self.image.shape[1])

    def pixels(self) -> np.ndarray:
        """Image as float64 H×W×3 in [0, 1]."""
        return self.image.astype(np.float64) / 255.0

    def boxes_array(self) -> np.ndarray:
        if not self.instances:
            return np.zeros((0, 4), dtype=np.float64)
        return np.array([i.box.as_tuple() for i in self.instances], dtype=np.float64)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SceneRecord):
            return NotImplemented
        return (self.image_id == other.image_id
                and self.domain == other.domain
                and self.instances == other.instances
                and self.image_labels == other.image_labels
                and self.image.shape == other.image.shape
                and np.array_equal(self.image, other.image))

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class DatasetManifest:
    """
    A split of the benchmark.

    Invariants:
    - at least two class names
    - on the train split, target records carry no instances
    - all images share the manifest's image size
    """
    class_names: Tuple[str, ...]
    records: Tuple[SceneRecord, ...]
    seed: int
    split: Split
    image_size: int

    def __post_init__(self):
        if len(self.class_names) < 2:
            raise InvalidArgumentError("at least two classes are required")
        for rec in self.records:
            if len(rec.image_labels) != len(self.class_names):
                raise InvalidArgumentError(f"{rec.image_id}: label length differs from class list")
            if rec.height != self.image_size or rec.width != self.image_size:
                raise InvalidArgumentError(f"{rec.image_id}: image is not {self.image_size}x{self.image_size}")
            if self.split is Split.TRAIN and rec.domain is DomainLabel.TARGET and rec.instances:
                raise InvalidArgumentError(f"{rec.image_id}: target training records carry no instances")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def by_domain(self, domain: DomainLabel) -> Tuple[SceneRecord, ...]:
        return tuple(r for r in self.records if r.domain is domain)


@dataclass(frozen=True)
class Detection:
    """A scored, class-labelled box produced at evaluation time."""
    image_id: str
    class_id: int
    score: float
    box: Box
    order: int = field(default=0, compare=False)
