"""
SA3 - Procedural Graphics System
Pillow rendering of the benchmark shapes and the two domain styles
"""

from .color_palette import ColorPalette
from .shape_renderer import SHAPE_NAMES, ShapeRenderer, shape_points

__all__ = [
    'ColorPalette',
    'SHAPE_NAMES',
    'ShapeRenderer',
    'shape_points',
]
