"""Detection metrics: IoU, greedy matching, P/R/F1, AP and PR curves."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from .model import BoundingBox, Detection, DetectionSet

DEFAULT_PR_GRID: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

# (confidence, is_tp)
Scored = Tuple[float, bool]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union


def detection_order_key(det: Detection, index: int):
    """Sort key: confidence descending, then larger area, then coordinates."""
    b = det.box
    return (-det.confidence, -b.area, b.x_min, b.y_min, b.x_max, b.y_max, index)


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class MatchResult:
    counts: MatchCounts
    # aligned with the input detection order
    labels: Tuple[bool, ...]
    confidences: Tuple[float, ...]

    @property
    def scored(self) -> List[Scored]:
        return list(zip(self.confidences, self.labels))


def match_detections(
    dets: Sequence[Detection] | DetectionSet,
    gts: Sequence[BoundingBox],
    iou_threshold: float = 0.5,
    min_confidence: Optional[float] = None,
) -> MatchResult:
    """Greedy one-to-one matching of detections to ground-truth boxes.

    Detections are visited by decreasing confidence; each one claims the
    still-unmatched ground truth with the highest IoU (lowest index on ties)
    if that IoU reaches ``iou_threshold``.  When ``min_confidence`` is given,
    detections below it are dropped before matching.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    dets = list(dets)
    if min_confidence is not None:
        dets = [d for d in dets if d.confidence >= min_confidence]
    order = sorted(range(len(dets)), key=lambda i: detection_order_key(dets[i], i))
    matched = [False] * len(gts)
    labels = [False] * len(dets)
    for i in order:
        best, best_iou = -1, -1.0
        for g, gt in enumerate(gts):
            if matched[g]:
                continue
            v = iou(dets[i].box, gt)
            if v > best_iou:
                best, best_iou = g, v
        if best >= 0 and best_iou >= iou_threshold:
            matched[best] = True
            labels[i] = True
    tp = sum(labels)
    counts = MatchCounts(tp=tp, fp=len(dets) - tp, fn=len(gts) - tp)
    return MatchResult(counts, tuple(labels), tuple(d.confidence for d in dets))


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def f1_score(precision: float, recall: float) -> float:
    s = precision + recall
    return 2.0 * precision * recall / s if s > 0 else 0.0


@dataclass(frozen=True)
class MetricRow:
    precision: float
    recall: float
    f1: float
    ap: float = 0.0


def precision_recall_f1(counts: MatchCounts) -> MetricRow:
    p = _ratio(counts.tp, counts.tp + counts.fp)
    r = _ratio(counts.tp, counts.tp + counts.fn)
    return MetricRow(precision=p, recall=r, f1=f1_score(p, r))


def _cumulative_at(scored: Sequence[Scored], thresholds_desc: Sequence[float]):
    """Yield (threshold, tp, n) with counts over detections at or above it."""
    ranked = sorted(scored, key=lambda s: -s[0])
    j = tp = 0
    for t in thresholds_desc:
        while j < len(ranked) and ranked[j][0] >= t:
            tp += bool(ranked[j][1])
            j += 1
        yield t, tp, j


def average_precision(
    scored: Sequence[Scored],
    gt_count: int,
    thresholds: Optional[Sequence[float]] = None,
) -> float:
    """Sum of ``(R_t - R_{t-1}) * P_t`` over thresholds in decreasing order.

    With ``thresholds=None`` the thresholds are the distinct confidences of
    ``scored``; otherwise the supplied grid is used.  ``R_0`` is 0.
    """
    if gt_count <= 0:
        return 0.0
    if thresholds is None:
        grid = sorted({c for c, _ in scored}, reverse=True)
    else:
        grid = sorted(set(thresholds), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for _, tp, n in _cumulative_at(scored, grid):
        recall = tp / gt_count
        ap += (recall - prev_recall) * _ratio(tp, n)
        prev_recall = recall
    return ap


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


def pr_curve(
    scored: Sequence[Scored],
    gt_count: int,
    thresholds: Sequence[float] = DEFAULT_PR_GRID,
) -> List[PRPoint]:
    points = {
        t: PRPoint(t, _ratio(tp, n), _ratio(tp, gt_count))
        for t, tp, n in _cumulative_at(scored, sorted(thresholds, reverse=True))
    }
    return [points[t] for t in thresholds]
