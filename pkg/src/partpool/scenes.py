"""Synthetic deformable-object scenes and proposal jittering.

Each object is a root blob plus several part blobs whose canonical layout
depends on the class; per-scene articulation offsets displace the parts,
and the ground-truth box is the tight bounding box of the rendered blobs.
Classes share blob appearance and differ only in part geometry, so both
recognition and box extent genuinely depend on part positions.  Optional
clutter blobs with part appearance (but no root) punish features that
smear part evidence over space instead of localizing it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import Config
from .core import Rect
from .metrics import iou

# Canonical part layouts (unit offsets, scaled by object size), one per
# class id starting at 1; cycled when the config asks for more classes.
# Classes differ in how parts splay, so part articulation drives both the
# class appearance and the tight box extent.
PART_LAYOUTS = [
    # horizontal splay
    [(-0.32, 0.0), (-0.11, 0.0), (0.11, 0.0), (0.32, 0.0)],
    # vertical splay
    [(0.0, -0.32), (0.0, -0.11), (0.0, 0.11), (0.0, 0.32)],
    # diagonal
    [(-0.28, -0.28), (-0.1, -0.1), (0.1, 0.1), (0.28, 0.28)],
    # corners
    [(-0.26, -0.26), (0.26, -0.26), (-0.26, 0.26), (0.26, 0.26)],
]


@dataclass(frozen=True)
class GtObject:
    class_id: int
    box: Rect                 # tight box, pixel coordinates
    center: tuple[float, float]
    size: float
    part_centers: np.ndarray  # (P, 2) pixel (x, y)


@dataclass(frozen=True)
class SyntheticScene:
    image: np.ndarray         # (channels, H, W)
    objects: tuple[GtObject, ...]
    seed: int


@dataclass(frozen=True)
class Proposal:
    box: Rect                 # pixel coordinates
    label: int                # 0 = background
    gt_index: int             # -1 for background


def _render_blob(image: np.ndarray, channel: int, cx: float, cy: float,
                 sigma: float, amplitude: float) -> None:
    h, w = image.shape[1:]
    r = int(math.ceil(3.0 * sigma))
    x0 = max(0, int(cx) - r)
    x1 = min(w, int(cx) + r + 1)
    y0 = max(0, int(cy) - r)
    y1 = min(h, int(cy) + r + 1)
    if x1 <= x0 or y1 <= y0:
        return
    ys = np.arange(y0, y1) + 0.5
    xs = np.arange(x0, x1) + 0.5
    d2 = ((xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2) / (2.0 * sigma * sigma)
    image[channel, y0:y1, x0:x1] += amplitude * np.exp(-d2)


def _layout(class_id: int) -> np.ndarray:
    return np.array(PART_LAYOUTS[(class_id - 1) % len(PART_LAYOUTS)])


def _make_object(rng: np.random.Generator, cfg: Config) -> GtObject:
    sc = cfg.scene
    size = rng.uniform(*sc.object_size)
    margin = 0.55 * size
    cx = rng.uniform(margin, cfg.image_size - margin)
    cy = rng.uniform(margin, cfg.image_size - margin)
    class_id = int(rng.integers(1, cfg.classes + 1))
    layout = _layout(class_id)
    if sc.offset_grid:
        # quantized articulation: each part sits at its canonical position
        # or exactly one articulation step away along each axis
        offsets = rng.integers(-1, 2, size=layout.shape) * (sc.offset_frac * size)
    else:
        offsets = rng.uniform(-sc.offset_frac * size, sc.offset_frac * size,
                              size=layout.shape)
    centers = np.array([cx, cy]) + layout * size + offsets
    blob_r = size / 7.0
    x0 = min(centers[:, 0].min(), cx) - blob_r
    x1 = max(centers[:, 0].max(), cx) + blob_r
    y0 = min(centers[:, 1].min(), cy) - blob_r
    y1 = max(centers[:, 1].max(), cy) + blob_r
    box = Rect(max(0.0, x0), max(0.0, y0),
               min(float(cfg.image_size), x1), min(float(cfg.image_size), y1))
    return GtObject(class_id=class_id, box=box, center=(cx, cy), size=size,
                    part_centers=centers)


def gen_scene(seed: int, cfg: Config) -> SyntheticScene:
    """Render one scene; bit-identical for identical (seed, config)."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    sc = cfg.scene
    image = rng.normal(0.0, sc.noise,
                       size=(cfg.in_channels, cfg.image_size, cfg.image_size))
    objects = []
    attempts = 0
    while len(objects) < sc.objects_per_scene:
        obj = _make_object(rng, cfg)
        attempts += 1
        if attempts > 500:
            raise RuntimeError("could not place objects under the overlap cap")
        if any(iou(obj.box, o.box) > sc.max_overlap for o in objects):
            continue
        objects.append(obj)
    for obj in objects:
        _render_blob(image, 1 % cfg.in_channels, obj.center[0], obj.center[1],
                     sc.root_sigma_frac * obj.size, 1.0)
        for px, py in obj.part_centers:
            _render_blob(image, 0, px, py, sc.part_sigma_frac * obj.size, 1.0)
    mean_size = 0.5 * (sc.object_size[0] + sc.object_size[1])
    placed = 0
    attempts = 0
    while placed < sc.clutter and attempts < 50 * max(1, sc.clutter):
        attempts += 1
        cx = rng.uniform(0.0, cfg.image_size)
        cy = rng.uniform(0.0, cfg.image_size)
        # keep clutter out of the enlarged pooling neighborhood of every
        # object so it degrades background ranking, not part evidence
        if any(b.x0 <= cx <= b.x1 and b.y0 <= cy <= b.y1
               for b in (o.box.scaled_about_center(1.6) for o in objects)):
            continue
        _render_blob(image, 0, cx, cy, sc.part_sigma_frac * mean_size, 1.0)
        placed += 1
    return SyntheticScene(image=image, objects=tuple(objects), seed=int(seed))


def _best_match(box: Rect, objects) -> tuple[float, int]:
    best, idx = 0.0, -1
    for i, obj in enumerate(objects):
        v = iou(box, obj.box)
        if v > best:
            best, idx = v, i
    return best, idx


def _label(box: Rect, scene: SyntheticScene, fg_iou: float) -> Proposal:
    best, idx = _best_match(box, scene.objects)
    if best >= fg_iou:
        return Proposal(box=box, label=scene.objects[idx].class_id, gt_index=idx)
    return Proposal(box=box, label=0, gt_index=-1)


def jitter_proposals(scene: SyntheticScene, n: int, seed: int, cfg: Config,
                     background: int | None = None) -> list[Proposal]:
    """n noisy copies of every ground-truth box plus uniform background
    boxes; labels follow the IoU >= fg_iou foreground rule."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    pc = cfg.proposals
    sigma = pc.jitter_sigma
    img = float(cfg.image_size)
    out: list[Proposal] = []
    for obj in scene.objects:
        b = obj.box
        for _ in range(n):
            w = b.width * pc.jitter_scale * float(
                np.clip(1.0 + sigma * rng.normal(), 0.75, 1.35))
            h = b.height * pc.jitter_scale * float(
                np.clip(1.0 + sigma * rng.normal(), 0.75, 1.35))
            cx = 0.5 * (b.x0 + b.x1) + sigma * b.width * rng.normal()
            cy = 0.5 * (b.y0 + b.y1) + sigma * b.height * rng.normal()
            x0 = max(0.0, cx - 0.5 * w)
            y0 = max(0.0, cy - 0.5 * h)
            x1 = min(img, cx + 0.5 * w)
            y1 = min(img, cy + 0.5 * h)
            if x1 <= x0 or y1 <= y0:
                continue
            out.append(_label(Rect(x0, y0, x1, y1), scene, pc.fg_iou))
    nbg = pc.background if background is None else background
    mean_size = 0.5 * (cfg.scene.object_size[0] + cfg.scene.object_size[1])
    for _ in range(nbg):
        s = mean_size * rng.uniform(0.75, 1.25)
        w = min(s, img)
        h = min(s * rng.uniform(0.8, 1.25), img)
        x0 = rng.uniform(0.0, img - w)
        y0 = rng.uniform(0.0, img - h)
        out.append(_label(Rect(x0, y0, x0 + w, y0 + h), scene, pc.fg_iou))
    return out
