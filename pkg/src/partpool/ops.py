"""Elementary differentiable operations and the finite-difference oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import NORM_EPS
from .errors import DimensionMismatch


def l2_normalize_block(values: np.ndarray) -> np.ndarray:
    """values / sqrt(sum(values^2) + eps); all-zero blocks stay zero."""
    v = np.asarray(values, dtype=np.float64)
    return v / np.sqrt(np.dot(v, v) + NORM_EPS)


def l2_normalize_block_backward(values: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of l2_normalize_block."""
    v = np.asarray(values, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    s2 = np.dot(v, v) + NORM_EPS
    s = np.sqrt(s2)
    return g / s - v * (np.dot(v, g) / (s2 * s))


def affine_forward(params, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.in_dim,):
        raise DimensionMismatch(f"affine input {x.shape} != ({params.in_dim},)")
    return params.weight @ x + params.bias


def affine_backward(params, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Accumulates dW, db into params and returns the input gradient."""
    x = np.asarray(x, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != (params.out_dim,):
        raise DimensionMismatch(f"affine upstream {up.shape} != ({params.out_dim},)")
    params.grad_weight += np.outer(up, x)
    params.grad_bias += up
    return params.weight.T @ up


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    return np.where(np.asarray(x) > 0.0, upstream, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_backward(probs: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    return p * (g - np.dot(p, g))


def cross_entropy_loss(probs: np.ndarray, label: int) -> float:
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.shape[0]:
        raise DimensionMismatch(f"label {label} outside {p.shape[0]} classes")
    return float(-np.log(max(p[label], 1e-300)))


def cross_entropy_backward(probs: np.ndarray, label: int, upstream: float = 1.0) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    g = np.zeros_like(p)
    g[label] = -upstream / max(p[label], 1e-300)
    return g


def smooth_l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Sum over coordinates: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    a = np.abs(d)
    per = np.where(a < 1.0, 0.5 * d * d, a - 0.5)
    return float(per.sum())


def smooth_l1_backward(pred: np.ndarray, target: np.ndarray, upstream: float = 1.0) -> np.ndarray:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return upstream * np.clip(d, -1.0, 1.0)


def finite_diff_gradient(f: Callable[[np.ndarray], float],
                         point: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function; the test oracle."""
    x = np.array(point, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max |a - n| / max(1e-3, |a|, |n|); the floor keeps near-zero entries
    from inflating central-difference round-off into spurious failures."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1e-3, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))
