"""Per-region prediction heads and the multi-task training loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AffineParams, Rect
from .errors import DimensionMismatch, NonFinite
from .ops import (affine_backward, affine_forward, cross_entropy_loss,
                  relu, relu_backward, smooth_l1_backward, smooth_l1_loss,
                  softmax)
from .pooling import Region


@dataclass
class RefineParams:
    """Two fully connected layers turning a deformation field into a
    multiplicative correction of the box deltas; shared across classes."""

    layer1: AffineParams  # 2k^2 -> hidden
    layer2: AffineParams  # hidden -> 4

    def zero_grad(self) -> None:
        self.layer1.zero_grad()
        self.layer2.zero_grad()


def init_refine(rng: np.random.Generator, k: int, hidden: int = 256) -> RefineParams:
    layer1 = AffineParams.init_uniform(rng, hidden, 2 * k * k)
    # identity start: zero weights, unit bias, so the multiplier is 1 and
    # refinement cannot hurt the base path early in training
    layer2 = AffineParams(np.zeros((4, hidden)), np.ones(4))
    return RefineParams(layer1, layer2)


def classify(pooled_values: np.ndarray) -> np.ndarray:
    """Average pooled part scores per class, then softmax."""
    logits = pooled_values.mean(axis=0)
    return softmax(logits)


def classify_backward(probs: np.ndarray, d_logits: np.ndarray, kk: int) -> np.ndarray:
    """Spread logit gradients uniformly back over the k^2 parts."""
    return np.tile(d_logits / kk, (kk, 1))


def localize_base(pooled_loc: np.ndarray) -> np.ndarray:
    """Average pooled localization values over parts; returns (C, 4)."""
    return pooled_loc.mean(axis=0)


def localize_base_backward(d_base: np.ndarray, kk: int) -> np.ndarray:
    return np.broadcast_to(d_base / kk, (kk,) + d_base.shape).copy()


def refine_localization(params: RefineParams, field: np.ndarray, base: np.ndarray):
    """Multiply base deltas by a field-conditioned correction.

    field is the 2k^2 normalized-displacement vector of one class; base its
    4 deltas. Returns (refined (4,), cache).
    """
    if field.shape != (params.layer1.in_dim,):
        raise DimensionMismatch(
            f"field {field.shape} != ({params.layer1.in_dim},)")
    pre = affine_forward(params.layer1, field)
    hid = relu(pre)
    mult = affine_forward(params.layer2, hid)
    return base * mult, (field, pre, hid, mult, base)


def refine_localization_backward(params: RefineParams, cache, d_out: np.ndarray):
    """Returns (d_base, d_field) and accumulates parameter gradients."""
    field, pre, hid, mult, base = cache
    d_base = d_out * mult
    d_mult = d_out * base
    d_hid = affine_backward(params.layer2, hid, d_mult)
    d_field = affine_backward(params.layer1, field, relu_backward(pre, d_hid))
    return d_base, d_field


def decode_box(region: Region, delta: np.ndarray,
               map_height: int, map_width: int) -> Rect:
    """Invert the center/log-size box parametrization against a region."""
    b = region.box
    tx, ty, tw, th = (float(v) for v in delta)
    cx, cy = b.center
    cx += tx * b.width
    cy += ty * b.height
    w = b.width * math.exp(tw)
    h = b.height * math.exp(th)
    if not (math.isfinite(w) and math.isfinite(h)):
        raise NonFinite(f"box deltas overflow exp: tw={tw}, th={th}")
    x0 = max(0.0, cx - 0.5 * w)
    y0 = max(0.0, cy - 0.5 * h)
    x1 = min(float(map_width), cx + 0.5 * w)
    y1 = min(float(map_height), cy + 0.5 * h)
    if x1 <= x0 or y1 <= y0:
        raise NonFinite(f"decoded box empty after clamping: {delta}")
    return Rect(x0, y0, x1, y1)


def multitask_loss(probs: np.ndarray, true_class: int,
                   deltas: np.ndarray | None, true_deltas: np.ndarray | None,
                   weight: float) -> float:
    """Cross entropy plus weighted smooth L1 on the true class's deltas.

    Background regions (true_class == 0) contribute classification only.
    """
    loss = cross_entropy_loss(probs, true_class)
    if true_class > 0:
        if deltas is None or true_deltas is None:
            raise DimensionMismatch("foreground region needs box deltas")
        if deltas.shape != (4,) or true_deltas.shape != (4,):
            raise DimensionMismatch("box deltas must have 4 entries")
        loss += weight * smooth_l1_loss(deltas, true_deltas)
    return loss


def multitask_loss_backward(probs: np.ndarray, true_class: int,
                            deltas: np.ndarray | None,
                            true_deltas: np.ndarray | None,
                            weight: float, upstream: float = 1.0):
    """Returns (d_logits, d_deltas); d_logits is the fused softmax + cross
    entropy gradient on the classification logits."""
    d_logits = probs.copy() * upstream
    d_logits[true_class] -= upstream
    d_deltas = None
    if true_class > 0:
        d_deltas = smooth_l1_backward(deltas, true_deltas, weight * upstream)
    return d_logits, d_deltas
