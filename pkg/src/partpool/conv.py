"""2-D convolution with dilation and strided average downsampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch


@dataclass
class ConvParams:
    """Convolution weights with same-padding semantics plus gradients."""

    kernel: np.ndarray  # (out, in, kh, kw)
    bias: np.ndarray    # (out,)
    dilation: int = 1
    stride: int = 1
    grad_kernel: np.ndarray = field(default=None)  # type: ignore[assignment]
    grad_bias: np.ndarray = field(default=None)    # type: ignore[assignment]

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 4:
            raise ValueError("kernel must be (out, in, kh, kw)")
        kh, kw = self.kernel.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel extents must be odd for same padding")
        if self.dilation < 1 or self.stride < 1:
            raise ValueError("dilation and stride must be >= 1")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError("bias shape mismatch")
        if self.grad_kernel is None:
            self.grad_kernel = np.zeros_like(self.kernel)
        if self.grad_bias is None:
            self.grad_bias = np.zeros_like(self.bias)

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    def zero_grad(self) -> None:
        self.grad_kernel.fill(0.0)
        self.grad_bias.fill(0.0)

    @classmethod
    def init_uniform(cls, rng: np.random.Generator, out_ch: int, in_ch: int,
                     ksize: int, dilation: int = 1, stride: int = 1) -> "ConvParams":
        fan_in = in_ch * ksize * ksize
        s = 1.0 / math.sqrt(fan_in)
        return cls(rng.uniform(-s, s, size=(out_ch, in_ch, ksize, ksize)),
                   rng.uniform(-s, s, size=out_ch),
                   dilation=dilation, stride=stride)


def _im2col(x: np.ndarray, kh: int, kw: int, dilation: int, stride: int) -> np.ndarray:
    """Patch tensor (in*kh*kw, Ho*Wo) for a same-padded dilated convolution."""
    ci, h, w = x.shape
    ph = dilation * (kh // 2)
    pw = dilation * (kw // 2)
    ho = (h + stride - 1) // stride
    wo = (w + stride - 1) // stride
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((ci, kh, kw, ho, wo), dtype=np.float64)
    for u in range(kh):
        for v in range(kw):
            cols[:, u, v] = xp[:,
                               u * dilation:u * dilation + (ho - 1) * stride + 1:stride,
                               v * dilation:v * dilation + (wo - 1) * stride + 1:stride]
    return cols.reshape(ci * kh * kw, ho * wo)


def dilated_conv_forward(params: ConvParams, x: np.ndarray):
    """Same-padded dilated convolution; returns (output, cache)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != params.in_channels:
        raise DimensionMismatch(
            f"conv input {x.shape} incompatible with {params.in_channels} channels")
    co, ci, kh, kw = params.kernel.shape
    h, w = x.shape[1:]
    ho = (h + params.stride - 1) // params.stride
    wo = (w + params.stride - 1) // params.stride
    cols = _im2col(x, kh, kw, params.dilation, params.stride)
    out = params.kernel.reshape(co, -1) @ cols + params.bias[:, None]
    return out.reshape(co, ho, wo), (x.shape, cols)


def dilated_conv_backward(params: ConvParams, cache, d_out: np.ndarray) -> np.ndarray:
    """Accumulates kernel/bias gradients and returns the input gradient."""
    x_shape, cols = cache
    co, ci, kh, kw = params.kernel.shape
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape[0] != co:
        raise DimensionMismatch(f"conv upstream has {d_out.shape[0]} channels, want {co}")
    dflat = d_out.reshape(co, -1)
    params.grad_kernel += (dflat @ cols.T).reshape(params.kernel.shape)
    params.grad_bias += dflat.sum(axis=1)
    dcols = (params.kernel.reshape(co, -1).T @ dflat)
    _, h, w = x_shape
    ho, wo = d_out.shape[1:]
    ph = params.dilation * (kh // 2)
    pw = params.dilation * (kw // 2)
    dxp = np.zeros((ci, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    dcols = dcols.reshape(ci, kh, kw, ho, wo)
    st = params.stride
    d = params.dilation
    for u in range(kh):
        for v in range(kw):
            dxp[:, u * d:u * d + (ho - 1) * st + 1:st,
                v * d:v * d + (wo - 1) * st + 1:st] += dcols[:, u, v]
    return dxp[:, ph:ph + h, pw:pw + w]


def avg_downsample(x: np.ndarray, factor: int) -> np.ndarray:
    """Non-overlapping average pooling by an integer factor."""
    c, h, w = x.shape
    if h % factor or w % factor:
        raise DimensionMismatch(f"{h}x{w} not divisible by {factor}")
    return x.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def avg_downsample_backward(d_out: np.ndarray, factor: int) -> np.ndarray:
    c, h, w = d_out.shape
    up = np.repeat(np.repeat(d_out, factor, axis=1), factor, axis=2)
    return up / (factor * factor)
