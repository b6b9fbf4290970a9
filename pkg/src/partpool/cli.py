"""Command-line interface.

Subcommands: train, eval, pool-demo, grad-check, inspect. Exit codes:
0 success, 2 config error, 3 I/O error, 4 checkpoint/config mismatch,
5 failed gradient check.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, load_config
from .errors import CheckpointError, ConfigInvalid, DegenerateRegion
from .gradcheck import TOLERANCE, run_all
from .metrics import Detection
from .pooling import (deformable_pool, dump_deformations, enlarge_region,
                      fit_part_grid, read_deformations, Region)
from .rng import stream_seeds
from .train import Model, evaluate, train
from .viz import render_overlay, write_ppm

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MISMATCH = 4
EXIT_GRADCHECK = 5


def _emit(args, record: dict, human: str) -> None:
    if args.json_lines:
        print(json.dumps(record))
    else:
        print(human)


def _load_cfg(args) -> Config:
    cfg = load_config(args.config)
    lam = None
    if args.lambda_def is not None:
        lam = math.inf if args.lambda_def == "inf" else float(args.lambda_def)
    return cfg.with_overrides(seed=args.seed, lambda_def=lam)


def _atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _write_report(path: str, report) -> None:
    _atomic_write_text(path, json.dumps(report.to_dict(), indent=2) + "\n")


def _write_detections(path: str, dets: list[Detection]) -> None:
    lines = []
    for d in dets:
        lines.append(json.dumps({
            "image": d.image_id, "class": d.class_id,
            "confidence": round(d.confidence, 6),
            "box": [d.box.x0, d.box.y0, d.box.x1, d.box.y1],
        }))
    _atomic_write_text(path, "".join(line + "\n" for line in lines))


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    model, trace = train(cfg)
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"),
                    model.backbone, model.refine)
    _atomic_write_text(os.path.join(args.out, "loss_trace.txt"),
                       "".join(f"{i} {v:.10f}\n" for i, v in enumerate(trace)))
    report, dets = evaluate(model, cfg)
    _write_report(os.path.join(args.out, "eval_report.json"), report)
    _write_detections(os.path.join(args.out, "detections.jsonl"), dets)
    _emit(args, {"event": "trained", "iterations": len(trace), **report.to_dict()},
          f"trained {len(trace)} iterations; "
          f"mAP@0.5={report.map50:.4f} mAP@0.75={report.map75:.4f} "
          f"mAP@[0.5:0.95]={report.map_avg:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    backbone, refine = load_checkpoint(args.checkpoint)
    if backbone.k != cfg.k or backbone.num_classes != cfg.classes \
            or backbone.in_channels != cfg.in_channels:
        raise CheckpointError(
            f"checkpoint (k={backbone.k}, classes={backbone.num_classes}, "
            f"in_channels={backbone.in_channels}) incompatible with config "
            f"(k={cfg.k}, classes={cfg.classes}, in_channels={cfg.in_channels})")
    if cfg.refinement and refine is None:
        raise CheckpointError("config enables refinement but the checkpoint "
                              "has no refinement parameters")
    model = Model(backbone=backbone, refine=refine if cfg.refinement else None)
    report, dets = evaluate(model, cfg)
    os.makedirs(args.out, exist_ok=True)
    _write_report(os.path.join(args.out, "eval_report.json"), report)
    _write_detections(os.path.join(args.out, "detections.jsonl"), dets)
    _emit(args, {"event": "evaluated", **report.to_dict()},
          f"mAP@0.5={report.map50:.4f} mAP@0.75={report.map75:.4f} "
          f"mAP@[0.5:0.95]={report.map_avg:.4f}")
    return EXIT_OK


def cmd_pool_demo(args) -> int:
    from .scenes import gen_scene, jitter_proposals
    from .train import init_model, _region_from_proposal
    cfg = _load_cfg(args)
    os.makedirs(args.out, exist_ok=True)
    model = init_model(cfg)
    from .backbone import build_stacks
    scene_seed, jitter_seed = stream_seeds(cfg.seed, "demo", 2)
    scene = gen_scene(int(scene_seed), cfg)
    proposals = [p for p in jitter_proposals(scene, 1, int(jitter_seed), cfg,
                                             background=0) if p.label > 0]
    stack, _, _ = build_stacks(model.backbone, scene.image)
    m = cfg.map_size
    dump_path = os.path.join(args.out, "deformations.jsonl")
    with open(dump_path, "w") as f:
        for rid, prop in enumerate(proposals):
            region = _region_from_proposal(prop, cfg, rid)
            try:
                enlarged = enlarge_region(region, cfg.enlarge_factor, m, m)
                grid = fit_part_grid(enlarged, cfg.k, m, m)
            except DegenerateRegion:
                continue
            pooled = deformable_pool(stack, grid, cfg.lambda_def,
                                     cfg.search_radius)
            dump_deformations(f, region, pooled)
            rgb = render_overlay(scene.image, enlarged, grid, pooled,
                                 class_id=prop.label, stride=cfg.downsample)
            write_ppm(os.path.join(args.out, f"overlay_{rid:03d}.ppm"), rgb)
    _emit(args, {"event": "pool-demo", "regions": len(proposals),
                 "dump": dump_path},
          f"wrote {len(proposals)} region dumps to {dump_path}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = run_all(seed=seed)
    failed = []
    for name, err in results.items():
        ok = err < TOLERANCE
        _emit(args, {"event": "grad-check", "operator": name,
                     "max_rel_error": err, "pass": ok},
              f"{name}: max relative error {err:.3e} "
              f"({'ok' if ok else 'FAIL'})")
        if not ok:
            failed.append(name)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}",
              file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_inspect(args) -> int:
    with open(args.dump) as f:
        records = list(read_deformations(f))
    for rec in records:
        d = np.asarray(rec["displacements"])
        ndx, ndy = d[0::2], d[1::2]
        summary = {
            "region": rec["region"], "class": rec["class"],
            "parts": int(d.size // 2),
            "mean_abs_ndx": float(np.abs(ndx).mean()),
            "mean_abs_ndy": float(np.abs(ndy).mean()),
            "max_abs": float(np.abs(d).max()),
            "moved_parts": int(((ndx != 0) | (ndy != 0)).sum()),
        }
        _emit(args, summary,
              f"region {summary['region']} class {summary['class']}: "
              f"{summary['moved_parts']}/{summary['parts']} parts moved, "
              f"mean |ndx|={summary['mean_abs_ndx']:.3f} "
              f"|ndy|={summary['mean_abs_ndy']:.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="partpool",
        description="Deformable part-based region pooling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, out=True):
        if config:
            p.add_argument("--config", required=True, help="config JSON path")
        if out:
            p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--lambda-def", dest="lambda_def", default=None,
                       metavar="{value|inf}",
                       help="deformation cost override; 'inf' disables "
                            "deformations")
        p.add_argument("--json-lines", action="store_true",
                       help="machine-parseable stdout, one record per line")

    common(sub.add_parser("train", help="train and evaluate a model"))
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint", help="checkpoint file")
    common(p_eval)
    common(sub.add_parser("pool-demo",
                          help="dump deformations and overlays for one scene"))
    p_gc = sub.add_parser("grad-check", help="finite-difference suite")
    common(p_gc, config=False, out=False)
    p_ins = sub.add_parser("inspect", help="summarize a deformation dump")
    p_ins.add_argument("dump", help="deformations.jsonl path")
    p_ins.add_argument("--json-lines", action="store_true")
    return parser


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "pool-demo": cmd_pool_demo,
    "grad-check": cmd_grad_check,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_MISMATCH
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
