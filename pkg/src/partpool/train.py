"""Training and evaluation loops over the synthetic benchmark."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backbone import (BackboneParams, build_stacks, build_stacks_backward,
                       init_backbone, normalize_stack_backward)
from .config import Config
from .core import Rect
from .errors import DegenerateRegion, NonFinite
from .heads import (RefineParams, classify, classify_backward, decode_box,
                    init_refine, localize_base, localize_base_backward,
                    multitask_loss, multitask_loss_backward,
                    refine_localization, refine_localization_backward)
from .metrics import Detection, EvalReport, GroundTruth, map_report, nms
from .pooling import (Region, deformable_pool, deformation_field,
                      enlarge_region, fit_part_grid, pool_localization,
                      deformable_pool_backward)
from .rng import stream_seeds, substream
from .scenes import Proposal, SyntheticScene, gen_scene, jitter_proposals

# deltas are clipped before decoding at inference time; an untrained
# regressor can otherwise overflow exp
DELTA_CLIP = 4.0


def encode_box(anchor: Rect, target: Rect) -> np.ndarray:
    """Center/log-size regression targets of a target box w.r.t. an anchor."""
    acx, acy = anchor.center
    tcx, tcy = target.center
    return np.array([
        (tcx - acx) / anchor.width,
        (tcy - acy) / anchor.height,
        math.log(target.width / anchor.width),
        math.log(target.height / anchor.height),
    ])


@dataclass
class Model:
    backbone: BackboneParams
    refine: Optional[RefineParams]

    def zero_grad(self) -> None:
        self.backbone.zero_grad()
        if self.refine is not None:
            self.refine.zero_grad()

    def param_pairs(self):
        pairs = []
        for conv in self.backbone.all_convs():
            pairs.append((conv.kernel, conv.grad_kernel))
            pairs.append((conv.bias, conv.grad_bias))
        if self.refine is not None:
            for aff in (self.refine.layer1, self.refine.layer2):
                pairs.append((aff.weight, aff.grad_weight))
                pairs.append((aff.bias, aff.grad_bias))
        return pairs


def init_model(cfg: Config) -> Model:
    rng = substream(cfg.seed, "init")
    backbone = init_backbone(rng, cfg.k, cfg.classes, cfg.in_channels,
                             hidden=cfg.hidden_channels,
                             downsample=cfg.downsample)
    refine = init_refine(rng, cfg.k, cfg.refine_hidden) if cfg.refinement else None
    return Model(backbone=backbone, refine=refine)


class SGD:
    """Plain SGD with momentum and decoupled-style L2 weight decay."""

    def __init__(self, pairs, lr: float, momentum: float, weight_decay: float):
        self.pairs = pairs
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p) for p, _ in pairs]

    def extend(self, pairs) -> None:
        self.pairs = self.pairs + list(pairs)
        self.velocity.extend(np.zeros_like(p) for p, _ in pairs)

    def step(self) -> None:
        for (p, g), v in zip(self.pairs, self.velocity):
            v *= self.momentum
            v -= self.lr * (g + self.weight_decay * p)
            p += v


def _region_from_proposal(prop: Proposal, cfg: Config, region_id: int) -> Region:
    return Region(box=prop.box.scaled(1.0 / cfg.downsample), region_id=region_id)


def _prepare_grid(region: Region, cfg: Config):
    m = cfg.map_size
    enlarged = enlarge_region(region, cfg.enlarge_factor, m, m)
    return fit_part_grid(enlarged, cfg.k, m, m)


def sample_batch(proposals: list[Proposal], cfg: Config,
                 rng: np.random.Generator) -> list[Proposal]:
    """Fast R-CNN style foreground/background mix from one image."""
    fg = [p for p in proposals if p.label > 0]
    bg = [p for p in proposals if p.label == 0]
    n = cfg.train.batch_regions
    n_fg = min(len(fg), int(round(n * cfg.train.fg_fraction)))
    batch = []
    if n_fg > 0:
        idx = rng.choice(len(fg), size=n_fg, replace=False)
        batch.extend(fg[i] for i in idx)
    n_bg = n - len(batch)
    pool = bg if bg else fg
    idx = rng.choice(len(pool), size=n_bg, replace=len(pool) < n_bg)
    batch.extend(pool[i] for i in idx)
    return batch


def train_step(model: Model, scene: SyntheticScene, proposals: list[Proposal],
               cfg: Config, rng: np.random.Generator, opt: SGD) -> float:
    """One SGD iteration over a mini-batch of regions from one scene."""
    model.zero_grad()
    stack, loc, cache = build_stacks(model.backbone, scene.image)
    d_norm = np.zeros_like(stack.normalized)
    d_loc = np.zeros_like(loc.maps)
    batch = sample_batch(proposals, cfg, rng)
    kk = cfg.k * cfg.k
    losses = []
    upstream = 1.0 / len(batch)
    for prop in batch:
        try:
            grid = _prepare_grid(_region_from_proposal(prop, cfg, 0), cfg)
        except DegenerateRegion:
            continue
        pooled = deformable_pool(stack, grid, cfg.lambda_def, cfg.search_radius)
        probs = classify(pooled.values)
        y = prop.label
        d_loc_values = None
        if y > 0:
            pooled_loc = pool_localization(loc, grid, pooled)
            base = localize_base(pooled_loc)
            target = encode_box(prop.box, scene.objects[prop.gt_index].box)
            if model.refine is not None:
                field = deformation_field(pooled)
                pred, rcache = refine_localization(model.refine, field[y - 1],
                                                   base[y - 1])
            else:
                pred = base[y - 1]
            losses.append(multitask_loss(probs, y, pred, target, cfg.loss_weight))
            d_logits, d_pred = multitask_loss_backward(
                probs, y, pred, target, cfg.loss_weight, upstream)
            if model.refine is not None:
                d_base_y, _ = refine_localization_backward(model.refine, rcache,
                                                           d_pred)
            else:
                d_base_y = d_pred
            d_base = np.zeros_like(base)
            d_base[y - 1] = d_base_y
            d_loc_values = localize_base_backward(d_base, kk)
        else:
            losses.append(multitask_loss(probs, 0, None, None, cfg.loss_weight))
            d_logits, _ = multitask_loss_backward(probs, 0, None, None,
                                                  cfg.loss_weight, upstream)
        d_values = classify_backward(probs, d_logits, kk)
        deformable_pool_backward(pooled, d_values, d_loc_values, d_norm, d_loc)
    if not losses:
        return 0.0
    d_raw = normalize_stack_backward(stack.raw, d_norm)
    build_stacks_backward(model.backbone, cache, d_raw, d_loc)
    opt.step()
    return float(np.mean(losses))


def train(cfg: Config) -> tuple[Model, list[float]]:
    """SGD over freshly generated scenes; returns the model and loss trace."""
    model = init_model(cfg)
    pairs = model.param_pairs()
    iters = cfg.train.iterations
    # The refinement head starts as an exact identity; keeping it frozen for
    # the warm-up leg means the base regressor first converges to the same
    # solution it would reach without refinement, and the multiplier then
    # only has to improve on it.
    unfreeze_at = int(iters * cfg.train.refine_warmup)
    frozen = pairs[-4:] if (model.refine is not None and unfreeze_at > 0) else []
    opt = SGD(pairs[:len(pairs) - len(frozen)], cfg.train.learning_rate,
              cfg.train.momentum, cfg.train.weight_decay)
    scene_seeds = stream_seeds(cfg.seed, "train-scenes", iters)
    jitter_seeds = stream_seeds(cfg.seed, "train-jitter", iters)
    sample_rng = substream(cfg.seed, "train-sample")
    decay_at = int(iters * cfg.train.lr_decay_at)
    trace = []
    for it in range(iters):
        if frozen and it == unfreeze_at:
            opt.extend(frozen)
            frozen = []
        if it == decay_at and cfg.train.lr_decay != 1.0:
            opt.lr *= cfg.train.lr_decay
        scene = gen_scene(int(scene_seeds[it]), cfg)
        proposals = jitter_proposals(scene, cfg.proposals.per_object,
                                     int(jitter_seeds[it]), cfg)
        trace.append(train_step(model, scene, proposals, cfg, sample_rng, opt))
    return model, trace


def detect_scene(model: Model, scene: SyntheticScene, image_id: int,
                 proposals: list[Proposal], cfg: Config) -> list[Detection]:
    """Run the full per-region pipeline and per-class NMS on one scene."""
    stack, loc, _ = build_stacks(model.backbone, scene.image)
    dets: list[Detection] = []
    m = cfg.map_size
    for rid, prop in enumerate(proposals):
        region = _region_from_proposal(prop, cfg, rid)
        region = Region(region.box, image_id=image_id, region_id=rid)
        try:
            grid = _prepare_grid(region, cfg)
        except DegenerateRegion:
            continue
        pooled = deformable_pool(stack, grid, cfg.lambda_def, cfg.search_radius)
        probs = classify(pooled.values)
        pooled_loc = pool_localization(loc, grid, pooled)
        base = localize_base(pooled_loc)
        field = deformation_field(pooled) if model.refine is not None else None
        for c in range(1, cfg.classes + 1):
            conf = float(probs[c])
            if conf < cfg.eval.score_threshold:
                continue
            if model.refine is not None:
                delta, _ = refine_localization(model.refine, field[c - 1],
                                               base[c - 1])
            else:
                delta = base[c - 1]
            delta = np.clip(delta, -DELTA_CLIP, DELTA_CLIP)
            try:
                box = decode_box(region, delta, m, m)
            except NonFinite:
                continue
            dets.append(Detection(image_id=image_id, class_id=c,
                                  confidence=conf,
                                  box=box.scaled(cfg.downsample),
                                  region_id=rid))
    return nms(dets, cfg.eval.nms_threshold)


def evaluate(model: Model, cfg: Config) -> tuple[EvalReport, list[Detection]]:
    """Detection metrics over held-out scenes; deterministic per seed."""
    scene_seeds = stream_seeds(cfg.seed, "eval-scenes", cfg.eval.scenes)
    jitter_seeds = stream_seeds(cfg.seed, "eval-jitter", cfg.eval.scenes)
    dets: list[Detection] = []
    gts: list[GroundTruth] = []
    for i in range(cfg.eval.scenes):
        scene = gen_scene(int(scene_seeds[i]), cfg)
        proposals = jitter_proposals(scene, cfg.eval.proposals_per_object,
                                     int(jitter_seeds[i]), cfg,
                                     background=cfg.eval.background)
        dets.extend(detect_scene(model, scene, i, proposals, cfg))
        gts.extend(GroundTruth(image_id=i, class_id=o.class_id, box=o.box)
                   for o in scene.objects)
    return map_report(dets, gts, cfg.classes), dets
