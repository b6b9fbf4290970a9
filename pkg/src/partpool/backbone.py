"""Small trainable feature extractor emitting per-part, per-class maps.

One forward pass over a whole input grid produces the classification stack
(k^2 * (C+1) maps) and the localization stack (k^2 * C * 4 maps), shared by
every region of that image. The classification stack also carries a copy
L2-normalized across the class axis at each (part, location) block; only
that copy feeds classification pooling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv import (ConvParams, avg_downsample, dilated_conv_backward,
                   dilated_conv_forward)
from .core import NORM_EPS, Grid2D
from .errors import DimensionMismatch
from .ops import relu, relu_backward


def normalize_stack(raw: np.ndarray) -> np.ndarray:
    """Per-location L2 normalization of each part's block of class maps."""
    norm = np.sqrt((raw * raw).sum(axis=1, keepdims=True) + NORM_EPS)
    return raw / norm


def normalize_stack_backward(raw: np.ndarray, d_norm: np.ndarray) -> np.ndarray:
    s2 = (raw * raw).sum(axis=1, keepdims=True) + NORM_EPS
    s = np.sqrt(s2)
    dot = (raw * d_norm).sum(axis=1, keepdims=True)
    return d_norm / s - raw * (dot / (s2 * s))


@dataclass(frozen=True)
class FeatureStack:
    """Classification score maps, raw and normalized, (k^2, C+1, H, W)."""

    k: int
    num_classes: int
    raw: np.ndarray
    normalized: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        kk = self.k * self.k
        c1 = self.num_classes + 1
        if self.raw.shape[:2] != (kk, c1) or self.raw.ndim != 4:
            raise DimensionMismatch(
                f"classification stack {self.raw.shape} != ({kk}, {c1}, H, W)")
        if self.normalized is None:
            object.__setattr__(self, "normalized", normalize_stack(self.raw))

    @property
    def map_height(self) -> int:
        return self.raw.shape[2]

    @property
    def map_width(self) -> int:
        return self.raw.shape[3]

    def map(self, part: int, cls: int, normalized: bool = False) -> Grid2D:
        src = self.normalized if normalized else self.raw
        return Grid2D(src[part, cls])


@dataclass(frozen=True)
class LocStack:
    """Box-regression maps (k^2, C, 4, H, W); coordinate order tx,ty,tw,th."""

    k: int
    num_classes: int
    maps: np.ndarray

    def __post_init__(self):
        kk = self.k * self.k
        if self.maps.shape[:3] != (kk, self.num_classes, 4) or self.maps.ndim != 5:
            raise DimensionMismatch(
                f"localization stack {self.maps.shape} != ({kk}, {self.num_classes}, 4, H, W)")


@dataclass
class BackboneParams:
    """Three 3x3 trunk convolutions (last one dilated) behind a fixed
    average downsample, plus two parallel 1x1 head convolutions."""

    k: int
    num_classes: int
    in_channels: int
    hidden: int
    downsample: int
    trunk: list[ConvParams]
    head_cls: ConvParams
    head_loc: ConvParams

    def all_convs(self) -> list[ConvParams]:
        return [*self.trunk, self.head_cls, self.head_loc]

    def zero_grad(self) -> None:
        for c in self.all_convs():
            c.zero_grad()


def init_backbone(rng: np.random.Generator, k: int, num_classes: int,
                  in_channels: int, hidden: int = 16,
                  downsample: int = 4) -> BackboneParams:
    trunk = [
        ConvParams.init_uniform(rng, hidden, in_channels, 3),
        ConvParams.init_uniform(rng, hidden, hidden, 3),
        ConvParams.init_uniform(rng, hidden, hidden, 3, dilation=2),
    ]
    kk = k * k
    head_cls = ConvParams.init_uniform(rng, kk * (num_classes + 1), hidden, 1)
    head_loc = ConvParams.init_uniform(rng, kk * num_classes * 4, hidden, 1)
    return BackboneParams(k=k, num_classes=num_classes, in_channels=in_channels,
                          hidden=hidden, downsample=downsample, trunk=trunk,
                          head_cls=head_cls, head_loc=head_loc)


def build_stacks(params: BackboneParams, image: np.ndarray):
    """Full-image forward pass; returns (FeatureStack, LocStack, cache)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != params.in_channels:
        raise DimensionMismatch(
            f"input {image.shape} incompatible with {params.in_channels} channels")
    x = avg_downsample(image, params.downsample)
    caches = []
    acts = []
    for conv in params.trunk:
        pre, cache = dilated_conv_forward(conv, x)
        caches.append(cache)
        acts.append(pre)
        x = relu(pre)
    cls_raw, cls_cache = dilated_conv_forward(params.head_cls, x)
    loc_raw, loc_cache = dilated_conv_forward(params.head_loc, x)
    h, w = cls_raw.shape[1:]
    kk = params.k * params.k
    c = params.num_classes
    stack = FeatureStack(params.k, c, cls_raw.reshape(kk, c + 1, h, w))
    loc = LocStack(params.k, c, loc_raw.reshape(kk, c, 4, h, w))
    cache = (caches, acts, cls_cache, loc_cache, (h, w))
    return stack, loc, cache


def build_stacks_backward(params: BackboneParams, cache,
                          d_cls_raw: np.ndarray, d_loc: np.ndarray) -> None:
    """Accumulates parameter gradients from stack gradients.

    d_cls_raw is the gradient on the raw (pre-normalization) classification
    stack; callers route normalized-copy gradients through
    normalize_stack_backward first.
    """
    caches, acts, cls_cache, loc_cache, (h, w) = cache
    kk = params.k * params.k
    c = params.num_classes
    dx = dilated_conv_backward(params.head_cls, cls_cache,
                               d_cls_raw.reshape(kk * (c + 1), h, w))
    dx += dilated_conv_backward(params.head_loc, loc_cache,
                                d_loc.reshape(kk * c * 4, h, w))
    for conv, cc, pre in zip(reversed(params.trunk), reversed(caches), reversed(acts)):
        dx = dilated_conv_backward(conv, cc, relu_backward(pre, dx))
    # the downsample adjoint is dropped: the input image is not trained
