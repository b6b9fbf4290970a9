"""Minimal portable-pixmap rendering of regions and part displacements."""

from __future__ import annotations

import numpy as np

from .core import Rect
from .pooling import PartGrid, PooledScores, Region

YELLOW = (255, 220, 40)
BLUE = (80, 140, 255)
RED = (255, 60, 60)


def write_ppm(path: str, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) uint8 array as binary PPM (P6)."""
    h, w, c = rgb.shape
    assert c == 3
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def image_to_rgb(image: np.ndarray) -> np.ndarray:
    """Grayscale composite of the input channels, scaled to uint8."""
    flat = image.sum(axis=0)
    lo, hi = flat.min(), flat.max()
    scale = 255.0 / (hi - lo) if hi > lo else 1.0
    gray = ((flat - lo) * scale).astype(np.uint8)
    return np.stack([gray, gray, gray], axis=-1)


def draw_rect(rgb: np.ndarray, rect: Rect, color) -> None:
    """One-pixel rectangle outline, clamped to the image."""
    h, w = rgb.shape[:2]
    x0 = int(np.clip(round(rect.x0), 0, w - 1))
    x1 = int(np.clip(round(rect.x1) - 1, 0, w - 1))
    y0 = int(np.clip(round(rect.y0), 0, h - 1))
    y1 = int(np.clip(round(rect.y1) - 1, 0, h - 1))
    rgb[y0, x0:x1 + 1] = color
    rgb[y1, x0:x1 + 1] = color
    rgb[y0:y1 + 1, x0] = color
    rgb[y0:y1 + 1, x1] = color


def render_overlay(image: np.ndarray, region: Region, grid: PartGrid,
                   pooled: PooledScores, class_id: int, stride: int) -> np.ndarray:
    """Region (yellow), part cells (blue) and displaced cells (red)."""
    rgb = image_to_rgb(image)
    for p, cell in enumerate(grid.cells):
        draw_rect(rgb, cell.scaled(stride), BLUE)
        dx = float(pooled.disp[p, class_id, 0])
        dy = float(pooled.disp[p, class_id, 1])
        draw_rect(rgb, cell.translated(dx, dy).scaled(stride), RED)
    draw_rect(rgb, region.box.scaled(stride), YELLOW)
    return rgb
