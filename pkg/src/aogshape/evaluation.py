"""VOC-style matching, average precision and FPPI-recall curves."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .geometry import BoundingBox


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    ih = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


@dataclass
class ScoredBox:
    image_id: str
    score: float
    box: BoundingBox


@dataclass
class MatchResult:
    detections: list[ScoredBox]
    tp: np.ndarray
    matched_gt: list[int | None]
    unmatched_gt: dict[str, int]
    n_gt: int
    n_images: int


@dataclass
class EvalCurve:
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    fppi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    fppi_recall: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def recall_at_fppi(self, f: float) -> float:
        ok = self.fppi <= f
        return float(self.fppi_recall[ok].max()) if np.any(ok) else 0.0


def rank(detections: Sequence[ScoredBox]) -> list[ScoredBox]:
    """Descending score; ties by image id then box coordinates."""
    return sorted(detections, key=lambda d: (-d.score, d.image_id, d.box.as_tuple()))


def match(detections: Sequence[ScoredBox], groundtruth: Mapping[str, Sequence[BoundingBox]],
          iou_thresh: float = 0.5, images: Sequence[str] | None = None) -> MatchResult:
    """Greedy global sweep; each detection takes its best-overlapping free groundtruth."""
    ranked = rank(detections)
    used = {k: np.zeros(len(v), dtype=bool) for k, v in groundtruth.items()}
    tp = np.zeros(len(ranked), dtype=bool)
    matched: list[int | None] = []
    for n, d in enumerate(ranked):
        gts = groundtruth.get(d.image_id, ())
        best, best_j = 0.0, None
        for j, g in enumerate(gts):
            if used[d.image_id][j]:
                continue
            o = iou(d.box, g)
            if o > best:
                best, best_j = o, j
        if best_j is not None and best >= iou_thresh:
            used[d.image_id][best_j] = True
            tp[n] = True
            matched.append(best_j)
        else:
            matched.append(None)
    n_gt = sum(len(v) for v in groundtruth.values())
    image_set = set(images) if images is not None else set(groundtruth) | {d.image_id for d in ranked}
    return MatchResult(ranked, tp, matched, {k: int((~u).sum()) for k, u in used.items()}, n_gt, len(image_set))


def average_precision(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-points interpolated area under the precision-recall curve."""
    if len(recall) == 0:
        return 0.0
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([precision, [0.0]])
    p = np.maximum.accumulate(p[::-1])[::-1][:-1]
    return float(np.sum((r[1:] - r[:-1]) * p))


def evaluate(detections: Sequence[ScoredBox], groundtruth: Mapping[str, Sequence[BoundingBox]],
             iou_thresh: float = 0.5, images: Sequence[str] | None = None) -> EvalCurve:
    m = match(detections, groundtruth, iou_thresh, images)
    tp = np.cumsum(m.tp)
    fp = np.cumsum(~m.tp)
    n = np.arange(1, len(m.tp) + 1)
    recall = tp / m.n_gt if m.n_gt else np.zeros(len(tp))
    precision = tp / n if len(n) else np.zeros(0)
    ap = average_precision(recall, precision) if m.n_gt else 0.0
    fppi = fp / max(m.n_images, 1)
    return EvalCurve(recall.astype(float), precision.astype(float), ap, fppi.astype(float), recall.astype(float))


def top1_accuracy(detections: Sequence[ScoredBox], groundtruth: Mapping[str, Sequence[BoundingBox]],
                  iou_thresh: float = 0.5) -> float:
    """Fraction of images with groundtruth whose top detection hits one of it."""
    best: dict[str, ScoredBox] = {}
    for d in rank(detections):
        best.setdefault(d.image_id, d)
    images = [k for k, v in groundtruth.items() if len(v)]
    if not images:
        return 0.0
    hits = sum(1 for k in images if k in best and any(iou(best[k].box, g) >= iou_thresh for g in groundtruth[k]))
    return hits / len(images)
