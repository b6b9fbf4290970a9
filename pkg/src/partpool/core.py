"""Dense 2-D maps, rectangles and rectangular average pooling.

Coordinates are continuous with the cell (iy, ix) occupying
[ix, ix+1) x [iy, iy+1); its center sits at (ix + 0.5, iy + 0.5).
A cell belongs to a rect iff its center lies inside the half-open rect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyRect

# Guard inside the normalization square root; all-zero blocks map to zero.
NORM_EPS = 1e-12


@dataclass(frozen=True)
class Rect:
    """Half-open axis-aligned rectangle in continuous cell coordinates."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError(f"degenerate rect {self!r}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))

    def translated(self, dx: float, dy: float) -> "Rect":
        return Rect(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def scaled_about_center(self, factor: float) -> "Rect":
        cx, cy = self.center
        hw = 0.5 * self.width * factor
        hh = 0.5 * self.height * factor
        return Rect(cx - hw, cy - hh, cx + hw, cy + hh)

    def scaled(self, factor: float) -> "Rect":
        return Rect(self.x0 * factor, self.y0 * factor,
                    self.x1 * factor, self.y1 * factor)


@dataclass(frozen=True)
class Grid2D:
    """Immutable dense 2-D scalar map (row-major, float64)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"Grid2D needs a 2-D array, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def at(self, y: int, x: int) -> float:
        if not (0 <= y < self.height and 0 <= x < self.width):
            raise IndexError(f"({y}, {x}) outside {self.height}x{self.width}")
        return float(self.values[y, x])


def cell_span(rect: Rect, height: int, width: int) -> tuple[int, int, int, int]:
    """Index span (xlo, xhi, ylo, yhi) of cells whose centers fall in the
    rect clamped to the map; half-open in both axes.

    Raises EmptyRect when no cell center is covered.
    """
    xlo = max(0, math.ceil(rect.x0 - 0.5))
    xhi = min(width, math.ceil(rect.x1 - 0.5))
    ylo = max(0, math.ceil(rect.y0 - 0.5))
    yhi = min(height, math.ceil(rect.y1 - 0.5))
    if xhi <= xlo or yhi <= ylo:
        raise EmptyRect(f"{rect} covers no cells of a {height}x{width} map")
    return xlo, xhi, ylo, yhi


def avg_pool_rect(grid: Grid2D, rect: Rect) -> float:
    """Mean of the grid cells whose centers fall in the clamped rect."""
    xlo, xhi, ylo, yhi = cell_span(rect, grid.height, grid.width)
    block = grid.values[ylo:yhi, xlo:xhi]
    return float(block.sum() / block.size)


def avg_pool_rect_backward(rect: Rect, upstream: float, grad_map: np.ndarray) -> None:
    """Adjoint of avg_pool_rect: adds upstream / n to each covered cell."""
    h, w = grad_map.shape
    xlo, xhi, ylo, yhi = cell_span(rect, h, w)
    n = (xhi - xlo) * (yhi - ylo)
    grad_map[ylo:yhi, xlo:xhi] += upstream / n


@dataclass
class AffineParams:
    """Weights of a fully connected layer plus gradient accumulators."""

    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    grad_weight: np.ndarray = field(default=None)  # type: ignore[assignment]
    grad_bias: np.ndarray = field(default=None)    # type: ignore[assignment]

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("weight must be (out, in) with matching bias")
        if self.grad_weight is None:
            self.grad_weight = np.zeros_like(self.weight)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    def zero_grad(self) -> None:
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)

    @classmethod
    def init_uniform(cls, rng: np.random.Generator, out_dim: int, in_dim: int) -> "AffineParams":
        s = 1.0 / math.sqrt(in_dim)
        return cls(rng.uniform(-s, s, size=(out_dim, in_dim)),
                   rng.uniform(-s, s, size=out_dim))
