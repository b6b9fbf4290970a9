"""Detection-quality metrics: IoU, greedy NMS, average precision."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Rect


@dataclass(frozen=True)
class Detection:
    image_id: int
    class_id: int
    confidence: float
    box: Rect
    region_id: int = -1


@dataclass(frozen=True)
class GroundTruth:
    image_id: int
    class_id: int
    box: Rect


@dataclass(frozen=True)
class EvalReport:
    ap50: dict          # class id -> AP at IoU 0.5
    ap75: dict
    ap_avg: dict        # averaged over IoU in [0.5:0.05:0.95]
    map50: float
    map75: float
    map_avg: float

    def to_dict(self) -> dict:
        return {
            "map50": self.map50, "map75": self.map75, "map_avg": self.map_avg,
            "ap50": {str(c): v for c, v in sorted(self.ap50.items())},
            "ap75": {str(c): v for c, v in sorted(self.ap75.items())},
            "ap_avg": {str(c): v for c, v in sorted(self.ap_avg.items())},
        }


def iou(a: Rect, b: Rect) -> float:
    """Intersection area over union area, in [0, 1]."""
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def nms(dets: list[Detection], threshold: float) -> list[Detection]:
    """Greedy per-class suppression of boxes with IoU > threshold.

    Kept detections come out in descending confidence (stable for ties).
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    kept: list[int] = []
    suppressed = [False] * len(dets)
    for i in order:
        if suppressed[i]:
            continue
        kept.append(i)
        di = dets[i]
        for j in order:
            if j == i or suppressed[j]:
                continue
            dj = dets[j]
            if (dj.class_id == di.class_id and dj.image_id == di.image_id
                    and iou(di.box, dj.box) > threshold):
                suppressed[j] = True
    return [dets[i] for i in kept]


def average_precision(dets: list[Detection], gts: list[GroundTruth],
                      iou_threshold: float) -> float:
    """Area under the precision-envelope PR curve for one class.

    Each ground truth is matched at most once, greedily in confidence
    order against the highest-IoU unmatched ground truth of its image.
    """
    npos = len(gts)
    if npos == 0:
        return 0.0
    by_image: dict[int, list[int]] = {}
    for gi, gt in enumerate(gts):
        by_image.setdefault(gt.image_id, []).append(gi)
    matched = [False] * npos
    order = sorted(range(len(dets)), key=lambda i: -dets[i].confidence)
    tp = np.zeros(len(order))
    for rank, di in enumerate(order):
        det = dets[di]
        best, best_gi = 0.0, -1
        for gi in by_image.get(det.image_id, ()):
            if matched[gi]:
                continue
            v = iou(det.box, gts[gi].box)
            if v > best:
                best, best_gi = v, gi
        if best >= iou_threshold and best_gi >= 0:
            matched[best_gi] = True
            tp[rank] = 1.0
    if len(order) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / npos
    precision = ctp / np.arange(1, len(order) + 1)
    # monotone precision envelope, integrated over recall
    env = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    ap = 0.0
    for r, p in zip(recall, env):
        ap += (r - prev_r) * p
        prev_r = r
    return float(ap)


IOU_SWEEP = [0.5 + 0.05 * i for i in range(10)]


def map_report(dets: list[Detection], gts: list[GroundTruth],
               num_classes: int) -> EvalReport:
    """Per-class AP at 0.5, 0.75 and averaged over [0.5:0.05:0.95]."""
    ap50, ap75, ap_avg = {}, {}, {}
    for c in range(1, num_classes + 1):
        cdets = [d for d in dets if d.class_id == c]
        cgts = [g for g in gts if g.class_id == c]
        sweep = [average_precision(cdets, cgts, t) for t in IOU_SWEEP]
        ap50[c] = sweep[0]
        ap75[c] = sweep[5]
        ap_avg[c] = float(np.mean(sweep))
    n = max(1, num_classes)
    return EvalReport(
        ap50=ap50, ap75=ap75, ap_avg=ap_avg,
        map50=sum(ap50.values()) / n,
        map75=sum(ap75.values()) / n,
        map_avg=sum(ap_avg.values()) / n,
    )
