"""End-to-end acceptance gate.

Each test class maps to one numbered acceptance criterion; timing budgets
are asserted where the criterion states one.
"""

import dataclasses
import math
import statistics
import time

import numpy as np
import pytest

from partpool import gradcheck
from partpool.backbone import FeatureStack, normalize_stack
from partpool.config import Config
from partpool.core import Rect
from partpool.heads import init_refine, localize_base, refine_localization
from partpool.metrics import Detection, GroundTruth, average_precision
from partpool.pooling import (Region, deformable_pool, default_search,
                              fit_part_grid, ps_pool)
from partpool.rng import substream
from partpool.train import evaluate, train


def random_instance(rng, k=2, classes=3, size=12):
    """A random normalized stack plus a part grid fitted to a random box."""
    raw = rng.normal(size=(k * k, classes + 1, size, size))
    stack = FeatureStack(k, classes, raw)
    while True:
        x0, y0 = rng.uniform(0.0, size - 5.0, size=2)
        w, h = rng.uniform(4.0, size - 1.0, size=2)
        box = Rect(x0, y0, min(float(size), x0 + w), min(float(size), y0 + h))
        try:
            grid = fit_part_grid(Region(box), k, size, size)
        except Exception:
            continue
        return stack, grid


class TestCriterion1LimitEquivalence:
    def test_lambda_1e9_bitwise_equals_ps_pool(self):
        rng = np.random.default_rng(1001)
        start = time.monotonic()
        for _ in range(1000):
            stack, grid = random_instance(rng)
            a = deformable_pool(stack, grid, 1e9)
            b = ps_pool(stack, grid)
            assert a.values.tobytes() == b.values.tobytes()
            assert not a.disp.any()
        assert time.monotonic() - start < 10.0


def oracle_search(stack, grid, lam, search):
    """Independent exhaustive enumeration of the displacement search.

    Deliberately written with plain Python loops and no code shared with
    the library kernels: clamp the shifted cell span, skip empty
    candidates, score mean - lam * ((dx/w)^2 + (dy/h)^2), and break ties
    by smaller squared normalized displacement, then by (dy, dx) order.
    """
    maps = stack.normalized
    kk, nc, h, w = maps.shape
    sx, sy = search
    disp = np.zeros((kk, nc, 2), dtype=np.int64)
    for p in range(kk):
        for c in range(nc):
            if c == 0:
                continue  # background pools at (0, 0) only
            best = None
            for dy in range(-sy, sy + 1):
                for dx in range(-sx, sx + 1):
                    xl = max(0, int(grid.xlo[p]) + dx)
                    xh = min(w, int(grid.xhi[p]) + dx)
                    yl = max(0, int(grid.ylo[p]) + dy)
                    yh = min(h, int(grid.yhi[p]) + dy)
                    if xh <= xl or yh <= yl:
                        continue
                    total = 0.0
                    for yy in range(yl, yh):
                        for xx in range(xl, xh):
                            total += maps[p, c, yy, xx]
                    mean = total / ((xh - xl) * (yh - yl))
                    ndsq = (dx / grid.part_w) ** 2 + (dy / grid.part_h) ** 2
                    obj = mean - lam * ndsq
                    if best is None or obj > best[0] or \
                            (obj == best[0] and ndsq < best[1]):
                        best = (obj, ndsq, dx, dy)
            disp[p, c] = (best[2], best[3])
    return disp


class TestCriterion2DisplacementOracle:
    LAMBDAS = (0.03, 0.1, 0.3, 1.0, 3.0)

    def test_exhaustive_oracle_match(self):
        rng = np.random.default_rng(1002)
        start = time.monotonic()
        for i in range(1000):
            stack, grid = random_instance(rng)
            lam = self.LAMBDAS[i % len(self.LAMBDAS)]
            search = default_search(grid)
            got = deformable_pool(stack, grid, lam, search)
            want = oracle_search(stack, grid, lam, search)
            assert np.array_equal(got.disp, want)
        assert time.monotonic() - start < 30.0


class TestCriterion3GradientSuite:
    def test_all_operators_below_tolerance(self):
        start = time.monotonic()
        results = gradcheck.run_all(seed=7)
        elapsed = time.monotonic() - start
        expected = {"avg_pool_rect", "l2_normalize_block", "affine",
                    "dilated_conv", "deformable_pool", "refine_localization",
                    "multitask_loss"}
        assert expected <= set(results)
        for name, err in results.items():
            assert err < gradcheck.TOLERANCE, f"{name}: {err:.3e}"
        assert elapsed < 60.0


class TestCriterion4NormalizationInvariant:
    def test_unit_norm_or_exact_zero(self):
        rng = np.random.default_rng(1004)
        raw = rng.normal(size=(9, 4, 16, 16))
        raw[3, :, 5, 5] = 0.0
        raw[7, :, 0, :] = 0.0
        out = normalize_stack(raw)
        norms = np.sqrt((out ** 2).sum(axis=1))
        zero_in = (raw == 0.0).all(axis=1)
        assert (norms[zero_in] == 0.0).all()
        active = norms[~zero_in]
        assert ((active >= 1.0 - 1e-6) & (active <= 1.0)).all()


class TestCriterion5RefinementIdentity:
    def test_identity_init_exact(self):
        rng = np.random.default_rng(1005)
        for k in (1, 2, 7):
            refine = init_refine(substream(1005, f"k{k}"), k=k)
            for _ in range(20):
                pooled_loc = rng.normal(size=(k * k, 3, 4))
                base = localize_base(pooled_loc)
                field = rng.normal(size=2 * k * k) * 10.0
                for c in range(3):
                    out, _ = refine_localization(refine, field, base[c])
                    assert np.array_equal(out, base[c])


def ablation_config(seed, lambda_def, refinement):
    cfg = Config()
    return dataclasses.replace(cfg, seed=seed, lambda_def=lambda_def,
                               refinement=refinement)


@pytest.fixture(scope="module")
def ablation_results():
    start = time.monotonic()
    rows = []
    for seed in range(5):
        runs = {}
        for tag, lam, refine in (("full", 0.3, True),
                                 ("rigid", math.inf, True),
                                 ("norefine", 0.3, False)):
            model, _ = train(ablation_config(seed, lam, refine))
            report, _ = evaluate(model, ablation_config(seed, lam, refine))
            runs[tag] = report
        rows.append(runs)
    return rows, time.monotonic() - start


class TestCriterion6DirectionalAblation:
    def test_deformation_and_refinement_gains(self, ablation_results):
        rows, elapsed = ablation_results
        gap50 = [100.0 * (r["full"].map50 - r["rigid"].map50) for r in rows]
        gap75 = [100.0 * (r["full"].map75 - r["norefine"].map75)
                 for r in rows]
        assert statistics.median(gap50) >= 2.0, gap50
        assert statistics.median(gap75) >= 1.0, gap75
        assert elapsed < 15 * 60.0


class TestCriterion7Determinism:
    def test_repeated_train_eval_identical(self):
        cfg = Config()
        cfg = dataclasses.replace(
            cfg,
            train=dataclasses.replace(cfg.train, iterations=40),
            eval=dataclasses.replace(cfg.eval, scenes=10))
        m1, t1 = train(cfg)
        r1, d1 = evaluate(m1, cfg)
        m2, t2 = train(cfg)
        r2, d2 = evaluate(m2, cfg)
        assert t1 == t2
        assert r1.to_dict() == r2.to_dict()
        assert d1 == d2


class TestCriterion8MetricSanity:
    GT = [GroundTruth(0, 1, Rect(0, 0, 10, 10)),
          GroundTruth(1, 1, Rect(5, 5, 25, 25))]

    def test_perfect_detections(self):
        dets = [Detection(g.image_id, 1, 0.9, g.box) for g in self.GT]
        assert average_precision(dets, self.GT, 0.5) == 1.0

    def test_ranked_tp_fp_pair(self):
        # rank 1 TP (p=1, r=1/2), rank 2 FP; envelope AP = 1/2 exactly
        dets = [Detection(0, 1, 0.9, Rect(0, 0, 10, 10)),
                Detection(0, 1, 0.8, Rect(40, 40, 50, 50))]
        assert average_precision(dets, self.GT, 0.5) == 0.5
        # reversed ranks: FP first, TP second -> precision 1/2 at recall 1/2
        dets = [Detection(0, 1, 0.9, Rect(40, 40, 50, 50)),
                Detection(0, 1, 0.8, Rect(0, 0, 10, 10))]
        assert average_precision(dets, self.GT, 0.5) == 0.25

    def test_empty(self):
        assert average_precision([], self.GT, 0.5) == 0.0
        assert average_precision([], [], 0.5) == 0.0


class TestCriterion9HeadlineNumbersOutOfScope:
    def test_documented_stand_in(self):
        # Full-scale benchmark numbers are a documentation-only non-goal;
        # the directional ablation above is their stand-in. This test
        # pins that decision so the suite states all nine criteria.
        readme = open("README.md", encoding="utf-8").read()
        assert "out of scope" in readme.lower()
