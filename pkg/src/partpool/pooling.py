"""Deformable part-based region pooling.

A k x k grid of part cells is fitted to a region. For every part and
foreground class, an integer displacement is chosen by brute force to
maximize the pooled (normalized) score minus a quadratic cost on the
displacement normalized by the part extent. The background class is always
pooled at zero displacement. Chosen displacements are stored and reused to
pool localization maps and to route gradients back to the same locations;
no gradient flows through the argmax itself.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Optional

import numpy as np

from . import kernels
from .backbone import FeatureStack, LocStack, normalize_stack_backward
from .core import Rect
from .errors import DegenerateRegion, DimensionMismatch


@dataclass(frozen=True)
class Region:
    """A candidate box in feature-map coordinates."""

    box: Rect
    image_id: int = 0
    region_id: int = 0
    objectness: Optional[float] = None


@dataclass(frozen=True)
class PartGrid:
    """k x k part cells tiling a region box, with shift-ready index spans."""

    k: int
    x0: float  # region box origin
    y0: float
    part_w: float
    part_h: float
    xlo: np.ndarray  # (k*k,) int64 spans before clamping to the map
    xhi: np.ndarray
    ylo: np.ndarray
    yhi: np.ndarray
    map_height: int
    map_width: int

    @functools.cached_property
    def cells(self) -> tuple:
        """k*k cell Rects, row-major over (i, j); built on demand."""
        out = []
        for i in range(self.k):
            for j in range(self.k):
                out.append(Rect(self.x0 + j * self.part_w,
                                self.y0 + i * self.part_h,
                                self.x0 + (j + 1) * self.part_w,
                                self.y0 + (i + 1) * self.part_h))
        return tuple(out)


@dataclass(frozen=True)
class PooledScores:
    """Pooled classification values and the displacement provenance."""

    values: np.ndarray  # (k*k, C+1)
    disp: np.ndarray    # (k*k, C+1, 2) integer (dx, dy); background is (0, 0)
    grid: PartGrid

    @property
    def num_classes(self) -> int:
        return self.values.shape[1] - 1


def enlarge_region(region: Region, factor: float,
                   map_height: int, map_width: int) -> Region:
    """Scale the box about its center, then clamp to map bounds."""
    if factor <= 0:
        raise ValueError("enlargement factor must be positive")
    b = region.box.scaled_about_center(factor)
    x0 = max(0.0, b.x0)
    y0 = max(0.0, b.y0)
    x1 = min(float(map_width), b.x1)
    y1 = min(float(map_height), b.y1)
    if x1 <= x0 or y1 <= y0:
        raise DegenerateRegion(f"region {region.box} empty after clamping")
    return Region(Rect(x0, y0, x1, y1), region.image_id,
                  region.region_id, region.objectness)


def fit_part_grid(region: Region, k: int, map_height: int, map_width: int) -> PartGrid:
    """Fit a regular k x k grid to the region box.

    Raises DegenerateRegion when any cell covers no map cell under the
    cell-center rule after clamping.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    b = region.box
    w = b.width / k
    h = b.height / k
    idx = np.arange(k, dtype=np.float64)
    col_lo = np.ceil(b.x0 + idx * w - 0.5).astype(np.int64)
    col_hi = np.ceil(b.x0 + (idx + 1.0) * w - 0.5).astype(np.int64)
    row_lo = np.ceil(b.y0 + idx * h - 0.5).astype(np.int64)
    row_hi = np.ceil(b.y0 + (idx + 1.0) * h - 0.5).astype(np.int64)
    if ((np.minimum(col_hi, map_width) <= np.maximum(col_lo, 0)).any()
            or (np.minimum(row_hi, map_height) <= np.maximum(row_lo, 0)).any()):
        raise DegenerateRegion(
            f"some part of a {k}x{k} grid on {b} covers no cells of a "
            f"{map_height}x{map_width} map")
    return PartGrid(k=k, x0=b.x0, y0=b.y0, part_w=w, part_h=h,
                    xlo=np.tile(col_lo, k), xhi=np.tile(col_hi, k),
                    ylo=np.repeat(row_lo, k), yhi=np.repeat(row_hi, k),
                    map_height=map_height, map_width=map_width)


def default_search(grid: PartGrid) -> tuple[int, int]:
    """One part extent in each axis, in integer map-cell steps."""
    return math.ceil(grid.part_w), math.ceil(grid.part_h)


def _check_stack(stack: FeatureStack, grid: PartGrid) -> None:
    if (stack.map_height, stack.map_width) != (grid.map_height, grid.map_width):
        raise DimensionMismatch("stack and grid disagree on map size")


def deformable_pool(stack: FeatureStack, grid: PartGrid, lam: float,
                    search: Optional[tuple[int, int]] = None) -> PooledScores:
    """Optimize per-(part, class) displacements and pool at them."""
    if lam < 0:
        raise ValueError("deformation cost weight must be >= 0")
    _check_stack(stack, grid)
    sx, sy = search if search is not None else default_search(grid)
    if sx < 0 or sy < 0:
        raise ValueError("search radii must be >= 0")
    lam = min(float(lam), 1e9)  # "infinite" mode saturates here
    try:
        pooled, disp = kernels.pool_search(
            stack.normalized, grid.xlo, grid.xhi, grid.ylo, grid.yhi,
            grid.part_w, grid.part_h, lam, sx, sy)
    except ValueError as e:
        raise DegenerateRegion(str(e)) from e
    return PooledScores(values=pooled, disp=disp, grid=grid)


def ps_pool(stack: FeatureStack, grid: PartGrid) -> PooledScores:
    """Position-sensitive pooling: every part at zero displacement."""
    _check_stack(stack, grid)
    try:
        pooled, disp = kernels.pool_search(
            stack.normalized, grid.xlo, grid.xhi, grid.ylo, grid.yhi,
            grid.part_w, grid.part_h, 0.0, 0, 0)
    except ValueError as e:
        raise DegenerateRegion(str(e)) from e
    return PooledScores(values=pooled, disp=disp, grid=grid)


def deformation_field(pooled: PooledScores) -> np.ndarray:
    """Normalized displacement vectors, one per foreground class.

    Returns (C, 2k^2); entries [2p] and [2p+1] hold (ndx, ndy) of part p
    in row-major part order.
    """
    grid = pooled.grid
    c = pooled.num_classes
    kk = grid.k * grid.k
    field = np.empty((c, 2 * kk), dtype=np.float64)
    field[:, 0::2] = pooled.disp[:, 1:, 0].T / grid.part_w
    field[:, 1::2] = pooled.disp[:, 1:, 1].T / grid.part_h
    return field


def pool_localization(loc: LocStack, grid: PartGrid, pooled: PooledScores) -> np.ndarray:
    """Pool localization maps at the displacements chosen for each class.

    Returns (k^2, C, 4); no fresh displacement optimization happens here.
    """
    kk, c = pooled.disp.shape[0], pooled.num_classes
    if loc.maps.shape[:3] != (kk, c, 4):
        raise DimensionMismatch("localization stack incompatible with pooled scores")
    maps = loc.maps.reshape(kk, c * 4, loc.maps.shape[3], loc.maps.shape[4])
    disp = np.repeat(pooled.disp[:, 1:], 4, axis=1)  # (kk, C*4, 2)
    disp = np.ascontiguousarray(disp)
    try:
        out = kernels.pool_fixed(maps, grid.xlo, grid.xhi, grid.ylo, grid.yhi, disp)
    except ValueError as e:
        raise DegenerateRegion(str(e)) from e
    return out.reshape(kk, c, 4)


def deformable_pool_backward(pooled: PooledScores,
                             d_values: Optional[np.ndarray],
                             d_loc_values: Optional[np.ndarray],
                             d_norm_stack: Optional[np.ndarray],
                             d_loc_stack: Optional[np.ndarray]) -> None:
    """Scatter pooled-value gradients back into stack gradient buffers.

    Displacements are treated as constants. d_norm_stack accumulates the
    gradient on the *normalized* classification stack; use
    normalize_stack_backward to reach the raw maps.
    """
    grid = pooled.grid
    if d_values is not None:
        if d_values.shape != pooled.values.shape:
            raise DimensionMismatch("classification upstream shape mismatch")
        kernels.scatter_fixed(d_norm_stack, grid.xlo, grid.xhi, grid.ylo,
                              grid.yhi, pooled.disp,
                              np.ascontiguousarray(d_values))
    if d_loc_values is not None:
        kk, c = pooled.disp.shape[0], pooled.num_classes
        if d_loc_values.shape != (kk, c, 4):
            raise DimensionMismatch("localization upstream shape mismatch")
        h, w = d_loc_stack.shape[3], d_loc_stack.shape[4]
        disp = np.ascontiguousarray(np.repeat(pooled.disp[:, 1:], 4, axis=1))
        kernels.scatter_fixed(d_loc_stack.reshape(kk, c * 4, h, w),
                              grid.xlo, grid.xhi, grid.ylo, grid.yhi, disp,
                              np.ascontiguousarray(d_loc_values.reshape(kk, c * 4)))


def classification_stack_gradient(stack: FeatureStack,
                                  d_norm_stack: np.ndarray) -> np.ndarray:
    """Map normalized-copy gradients to the raw classification stack."""
    return normalize_stack_backward(stack.raw, d_norm_stack)


def dump_deformations(fp: IO[str], region: Region, pooled: PooledScores) -> None:
    """Write one line-delimited record per (region, class)."""
    field = deformation_field(pooled)
    for ci in range(pooled.num_classes):
        rec = {"region": region.region_id, "image": region.image_id,
               "class": ci + 1, "displacements": field[ci].tolist()}
        fp.write(json.dumps(rec) + "\n")


def read_deformations(fp: IO[str]) -> Iterable[dict]:
    for line in fp:
        line = line.strip()
        if line:
            yield json.loads(line)
