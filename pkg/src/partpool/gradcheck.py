"""Finite-difference verification of every backward pass.

Each check builds a random scalar objective, compares the analytic
gradient against central differences (h = 1e-5, float64) and reports the
max relative error. Non-smooth operators are checked at points where the
relevant argmax or kink wins by a margin, resampling until it does.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .backbone import FeatureStack, normalize_stack, normalize_stack_backward
from .conv import ConvParams, dilated_conv_backward, dilated_conv_forward
from .core import AffineParams, Grid2D, Rect, avg_pool_rect, avg_pool_rect_backward
from .heads import (RefineParams, refine_localization,
                    refine_localization_backward)
from .pooling import (Region, deformable_pool, deformable_pool_backward,
                      fit_part_grid)

H_STEP = 1e-5
TOLERANCE = 1e-4


def _check_avg_pool(rng: np.random.Generator) -> float:
    worst = 0.0
    for _ in range(5):
        vals = rng.normal(size=(7, 9))
        rect = Rect(rng.uniform(0, 4), rng.uniform(0, 3),
                    rng.uniform(5, 9), rng.uniform(4, 7))
        grad = np.zeros_like(vals)
        avg_pool_rect_backward(rect, 1.0, grad)
        num = ops.finite_diff_gradient(
            lambda v: avg_pool_rect(Grid2D(v), rect), vals, H_STEP)
        worst = max(worst, ops.max_rel_error(grad, num))
    return worst


def _check_l2_normalize(rng: np.random.Generator) -> float:
    worst = 0.0
    for _ in range(5):
        v = rng.normal(size=6)
        if np.linalg.norm(v) < 0.3:
            v = v + 0.5
        u = rng.normal(size=6)
        ana = ops.l2_normalize_block_backward(v, u)
        num = ops.finite_diff_gradient(
            lambda x: float(np.dot(u, ops.l2_normalize_block(x))), v, H_STEP)
        worst = max(worst, ops.max_rel_error(ana, num))
    return worst


def _check_affine(rng: np.random.Generator) -> float:
    worst = 0.0
    for _ in range(5):
        params = AffineParams.init_uniform(rng, 3, 5)
        x = rng.normal(size=5)
        u = rng.normal(size=3)
        params.zero_grad()
        dx = ops.affine_backward(params, x, u)

        def f_w(w, b=params.bias, x=x):
            return float(np.dot(u, w @ x + b))

        def f_b(b, w=params.weight, x=x):
            return float(np.dot(u, w @ x + b))

        def f_x(x, w=params.weight, b=params.bias):
            return float(np.dot(u, w @ x + b))

        worst = max(worst,
                    ops.max_rel_error(params.grad_weight,
                                      ops.finite_diff_gradient(f_w, params.weight, H_STEP)),
                    ops.max_rel_error(params.grad_bias,
                                      ops.finite_diff_gradient(f_b, params.bias, H_STEP)),
                    ops.max_rel_error(dx, ops.finite_diff_gradient(f_x, x, H_STEP)))
    return worst


def _check_conv(rng: np.random.Generator) -> float:
    worst = 0.0
    for dilation in (1, 2):
        conv = ConvParams.init_uniform(rng, 3, 2, 3, dilation=dilation)
        x = rng.normal(size=(2, 6, 7))
        out, cache = dilated_conv_forward(conv, x)
        u = rng.normal(size=out.shape)
        conv.zero_grad()
        dx = dilated_conv_backward(conv, cache, u)

        def f_x(x, conv=conv):
            return float((dilated_conv_forward(conv, x)[0] * u).sum())

        def f_k(kern, conv=conv, x=x):
            c2 = ConvParams(kern, conv.bias, conv.dilation, conv.stride)
            return float((dilated_conv_forward(c2, x)[0] * u).sum())

        def f_b(bias, conv=conv, x=x):
            c2 = ConvParams(conv.kernel, bias, conv.dilation, conv.stride)
            return float((dilated_conv_forward(c2, x)[0] * u).sum())

        worst = max(worst,
                    ops.max_rel_error(dx, ops.finite_diff_gradient(f_x, x, H_STEP)),
                    ops.max_rel_error(conv.grad_kernel,
                                      ops.finite_diff_gradient(f_k, conv.kernel, H_STEP)),
                    ops.max_rel_error(conv.grad_bias,
                                      ops.finite_diff_gradient(f_b, conv.bias, H_STEP)))
    return worst


def _pool_instance(rng: np.random.Generator, k: int = 2, classes: int = 2,
                   size: int = 9, lam: float = 0.3):
    """Random raw stack + grid where every argmax wins by a clear margin."""
    kk = k * k
    region = Region(Rect(1.2, 1.0, 7.6, 7.9))
    for _ in range(200):
        raw = rng.normal(size=(kk, classes + 1, size, size))
        raw += 0.6 * np.sign(raw)  # keep block norms away from zero
        stack = FeatureStack(k, classes, raw)
        grid = fit_part_grid(region, k, size, size)
        pooled = deformable_pool(stack, grid, lam)
        if _argmax_margin(stack, grid, lam) > 1e-3:
            return raw, stack, grid, pooled
    raise RuntimeError("could not find a margin-separated pooling instance")


def _argmax_margin(stack, grid, lam) -> float:
    """Smallest gap between best and runner-up objective over candidates."""
    from .kernels import pool_search
    from .pooling import default_search
    sx, sy = default_search(grid)
    kk, c1 = stack.normalized.shape[:2]
    margin = np.inf
    best, _ = pool_search(stack.normalized, grid.xlo, grid.xhi, grid.ylo,
                          grid.yhi, grid.part_w, grid.part_h, lam, sx, sy)
    h, w = stack.map_height, stack.map_width
    for p in range(kk):
        for c in range(1, c1):
            second = -np.inf
            hit_best = False
            for dy in range(-sy, sy + 1):
                yl = max(0, grid.ylo[p] + dy)
                yh = min(h, grid.yhi[p] + dy)
                if yh <= yl:
                    continue
                for dx in range(-sx, sx + 1):
                    xl = max(0, grid.xlo[p] + dx)
                    xh = min(w, grid.xhi[p] + dx)
                    if xh <= xl:
                        continue
                    pool = stack.normalized[p, c, yl:yh, xl:xh].mean()
                    obj = pool - lam * ((dx / grid.part_w) ** 2
                                        + (dy / grid.part_h) ** 2)
                    if obj == best[p, c] and not hit_best:
                        hit_best = True
                    elif obj > second:
                        second = obj
            margin = min(margin, best[p, c] - second)
    return float(margin)


def _check_deformable_pool(rng: np.random.Generator) -> float:
    raw, stack, grid, pooled = _pool_instance(rng)
    u = rng.normal(size=pooled.values.shape)
    d_norm = np.zeros_like(stack.normalized)
    deformable_pool_backward(pooled, u, None, d_norm, None)
    ana = normalize_stack_backward(raw, d_norm)

    def f(r):
        s = FeatureStack(stack.k, stack.num_classes, r)
        p = deformable_pool(s, grid, 0.3)
        return float((p.values * u).sum())

    num = ops.finite_diff_gradient(f, raw, H_STEP)
    return ops.max_rel_error(ana, num)


def _refine_instance(rng: np.random.Generator, k: int = 2, hidden: int = 6):
    for _ in range(100):
        params = RefineParams(AffineParams.init_uniform(rng, hidden, 2 * k * k),
                              AffineParams.init_uniform(rng, 4, hidden))
        field = rng.normal(size=2 * k * k)
        base = rng.normal(size=4)
        pre = params.layer1.weight @ field + params.layer1.bias
        if np.abs(pre).min() > 1e-3:  # away from the ReLU kink
            return params, field, base
    raise RuntimeError("could not find a kink-free refinement instance")


def _check_refine(rng: np.random.Generator) -> float:
    params, field, base = _refine_instance(rng)
    u = rng.normal(size=4)
    out, cache = refine_localization(params, field, base)
    params.zero_grad()
    d_base, d_field = refine_localization_backward(params, cache, u)

    def run(p1w, p1b, p2w, p2b, fld, bs):
        p = RefineParams(AffineParams(p1w, p1b), AffineParams(p2w, p2b))
        return float(np.dot(u, refine_localization(p, fld, bs)[0]))

    l1, l2 = params.layer1, params.layer2
    checks = [
        (d_base, ops.finite_diff_gradient(
            lambda b: run(l1.weight, l1.bias, l2.weight, l2.bias, field, b),
            base, H_STEP)),
        (d_field, ops.finite_diff_gradient(
            lambda f: run(l1.weight, l1.bias, l2.weight, l2.bias, f, base),
            field, H_STEP)),
        (l1.grad_weight, ops.finite_diff_gradient(
            lambda w: run(w, l1.bias, l2.weight, l2.bias, field, base),
            l1.weight, H_STEP)),
        (l1.grad_bias, ops.finite_diff_gradient(
            lambda b: run(l1.weight, b, l2.weight, l2.bias, field, base),
            l1.bias, H_STEP)),
        (l2.grad_weight, ops.finite_diff_gradient(
            lambda w: run(l1.weight, l1.bias, w, l2.bias, field, base),
            l2.weight, H_STEP)),
        (l2.grad_bias, ops.finite_diff_gradient(
            lambda b: run(l1.weight, l1.bias, l2.weight, b, field, base),
            l2.bias, H_STEP)),
    ]
    return max(ops.max_rel_error(a, n) for a, n in checks)


def _check_multitask(rng: np.random.Generator) -> float:
    """Composed loss: classify + refined localization + multi-task sum."""
    from .heads import (classify, classify_backward, multitask_loss,
                        multitask_loss_backward)
    k, classes, weight = 2, 2, 7.0
    kk = k * k
    params, field, base4 = _refine_instance(rng, k=k)
    for _ in range(100):
        pooled = rng.normal(size=(kk, classes + 1))
        y = 1
        target = rng.normal(size=4) * 0.5
        pred, rcache = refine_localization(params, field, base4)
        if np.abs(np.abs(pred - target) - 1.0).min() > 1e-3:
            break
    probs = classify(pooled)
    loss_ref = multitask_loss(probs, y, pred, target, weight)
    assert loss_ref >= 0.0
    d_logits, d_pred = multitask_loss_backward(probs, y, pred, target, weight)
    d_pooled = classify_backward(probs, d_logits, kk)
    params.zero_grad()
    d_base, _ = refine_localization_backward(params, rcache, d_pred)

    def f_pooled(pv):
        pr = classify(pv)
        return multitask_loss(pr, y, pred, target, weight)

    def f_base(b):
        out, _ = refine_localization(params, field, b)
        return multitask_loss(probs, y, out, target, weight)

    return max(
        ops.max_rel_error(d_pooled, ops.finite_diff_gradient(f_pooled, pooled, H_STEP)),
        ops.max_rel_error(d_base, ops.finite_diff_gradient(f_base, base4, H_STEP)))


CHECKS = [
    ("avg_pool_rect", _check_avg_pool),
    ("l2_normalize_block", _check_l2_normalize),
    ("affine", _check_affine),
    ("dilated_conv", _check_conv),
    ("deformable_pool", _check_deformable_pool),
    ("refine_localization", _check_refine),
    ("multitask_loss", _check_multitask),
]


def run_all(seed: int = 0) -> dict[str, float]:
    """Max relative error per operator, keyed by operator name."""
    results = {}
    for name, fn in CHECKS:
        rng = substream_for(seed, name)
        results[name] = fn(rng)
    return results


def substream_for(seed: int, name: str) -> np.random.Generator:
    from .rng import substream
    return substream(seed, "gradcheck/" + name)
