"""
Shape Renderer - Draws the benchmark's object classes with Pillow

Every shape is fitted to an integer box [x1, x2) × [y1, y2): the drawn
pixels touch the box on all four sides, so the annotation box is the
shape's tight extent. Filled style is used for source scenes and 2 px
strokes for target scenes.
"""

import math
from typing import List, Sequence, Tuple

from PIL import ImageDraw

from standards.errors import InvalidArgumentError

SHAPE_NAMES = ("circle", "square", "triangle", "diamond", "hexagon", "star")

STROKE_WIDTH = 2
STAR_INNER_RATIO = 0.45

Point = Tuple[float, float]


def shape_points(shape: str, box: Sequence[int]) -> List[Point]:
    """Polygon vertices of a shape inside an integer box (inclusive pixel extents)"""
    x1, y1 = box[0], box[1]
    x2, y2 = box[2] - 1, box[3] - 1
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    w, h = x2 - x1, y2 - y1
    if shape == "triangle":
        return [(x1, y2), (cx, y1), (x2, y2)]
    if shape == "diamond":
        return [(cx, y1), (x2, cy), (cx, y2), (x1, cy)]
    if shape == "hexagon":
        return [(x1 + w / 4, y1), (x2 - w / 4, y1), (x2, cy),
                (x2 - w / 4, y2), (x1 + w / 4, y2), (x1, cy)]
    if shape == "star":
        # unit star spans x ∈ [-cos 18°, cos 18°], y ∈ [-1, sin 54°]
        half_width = math.cos(math.pi / 10)
        depth = 1 + math.sin(3 * math.pi / 10)
        points = []
        for i in range(10):
            angle = -math.pi / 2 + i * math.pi / 5
            scale = 1.0 if i % 2 == 0 else STAR_INNER_RATIO
            ux, uy = math.cos(angle) * scale, math.sin(angle) * scale
            points.append((cx + ux / half_width * w / 2, y1 + (uy + 1) / depth * h))
        return points
    raise InvalidArgumentError(f"'{shape}' has no polygon form")


class ShapeRenderer:
    """Draws one shape per call onto a Pillow canvas"""

    def __init__(self, stroke_width: int = STROKE_WIDTH):
        if stroke_width < 1:
            raise InvalidArgumentError(f"stroke width must be ≥ 1, got {stroke_width}")
        self.stroke_width = stroke_width

    def draw(self, draw: ImageDraw.ImageDraw, shape: str, box: Sequence[int],
             color: Tuple[int, int, int], filled: bool) -> None:
        if shape not in SHAPE_NAMES:
            raise InvalidArgumentError(f"unknown shape '{shape}' (known: {', '.join(SHAPE_NAMES)})")
        bounds = [box[0], box[1], box[2] - 1, box[3] - 1]
        if shape == "circle":
            if filled:
                draw.ellipse(bounds, fill=color)
            else:
                draw.ellipse(bounds, outline=color, width=self.stroke_width)
        elif shape == "square":
            if filled:
                draw.rectangle(bounds, fill=color)
            else:
                draw.rectangle(bounds, outline=color, width=self.stroke_width)
        else:
            points = shape_points(shape, box)
            if filled:
                draw.polygon(points, fill=color)
            else:
                draw.line(points + [points[0]], fill=color, width=self.stroke_width, joint="curve")
