"""
Color Palette System - Domain color schemes for the synthetic scenes

Source ("photo") scenes use bright gradient backgrounds with saturated
fills; target ("cartoon") scenes use dark flat backgrounds, light strokes
and a global hue rotation.
"""

from typing import Sequence, Tuple

import numpy as np
from PIL import Image

RGB = Tuple[int, int, int]


class ColorPalette:
    """Named colors and color arithmetic for scene rendering"""

    SOURCE_BACKGROUNDS = (
        (236, 226, 208),
        (214, 232, 240),
        (228, 240, 214),
        (244, 220, 220),
        (220, 214, 240),
        (250, 242, 196),
    )

    SOURCE_FILLS = (
        (200, 40, 40),
        (40, 120, 200),
        (40, 160, 70),
        (220, 140, 20),
        (130, 60, 180),
        (30, 150, 150),
        (90, 90, 90),
    )

    TARGET_BACKGROUNDS = (
        (24, 24, 36),
        (36, 20, 28),
        (18, 34, 30),
        (30, 30, 30),
    )

    TARGET_STROKES = (
        (255, 255, 255),
        (255, 230, 120),
        (140, 255, 200),
        (255, 160, 220),
        (150, 200, 255),
    )

    @classmethod
    def pick(cls, colors: Sequence[RGB], index: int) -> RGB:
        return colors[index % len(colors)]

    @classmethod
    def lerp(cls, color1: RGB, color2: RGB, t: float) -> RGB:
        """Linear interpolation between two colors"""
        t = max(0.0, min(1.0, t))
        r = int(color1[0] + (color2[0] - color1[0]) * t)
        g = int(color1[1] + (color2[1] - color1[1]) * t)
        b = int(color1[2] + (color2[2] - color1[2]) * t)
        return (r, g, b)

    @classmethod
    def vertical_gradient(cls, top: RGB, bottom: RGB, width: int, height: int) -> np.ndarray:
        """H×W×3 uint8 gradient, one lerp per row"""
        rows = [cls.lerp(top, bottom, y / max(1, height - 1)) for y in range(height)]
        column = np.asarray(rows, dtype=np.uint8).reshape(height, 1, 3)
        return np.ascontiguousarray(np.broadcast_to(column, (height, width, 3)))

    @classmethod
    def hue_shift(cls, image: Image.Image, shift: int) -> Image.Image:
        """Rotate every pixel's hue by `shift` steps of 256 (Pillow HSV)"""
        h, s, v = image.convert("HSV").split()
        h = h.point(lambda value: (value + shift) % 256)
        return Image.merge("HSV", (h, s, v)).convert("RGB")
