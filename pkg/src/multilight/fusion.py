"""Greedy NMS and late fusion of detections across a region stack."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Sequence

from .metrics import detection_order_key, iou
from .model import Detection, DetectionSet, RegionStack


@dataclass(frozen=True)
class FusionParams:
    theta: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must be in (0, 1], got {self.theta}")


def nms(detections: DetectionSet | Sequence[Detection], params: FusionParams = FusionParams()) -> DetectionSet:
    """Keep the most confident box, drop everything overlapping it by IoU >= theta, repeat.

    Equal confidences are broken by larger area, then by coordinates, then by
    input position.  The kept set is returned in selection order.
    """
    dets = list(detections)
    order = sorted(range(len(dets)), key=lambda i: detection_order_key(dets[i], i))
    removed = [False] * len(dets)
    kept: List[Detection] = []
    for pos, i in enumerate(order):
        if removed[i]:
            continue
        keep = dets[i]
        kept.append(keep)
        for j in order[pos + 1:]:
            if not removed[j] and iou(keep.box, dets[j].box) >= params.theta:
                removed[j] = True
    return DetectionSet(tuple(kept))


def pooled_detections(stack: RegionStack) -> DetectionSet:
    missing = [rec.image_id for rec in stack if rec.detections is None]
    if missing:
        raise ValueError(f"images without detections: {', '.join(missing)}")
    return DetectionSet.concat(rec.detections for rec in stack)


def fuse_region(stack: RegionStack, params: FusionParams = FusionParams()) -> RegionStack:
    """Replace every image's detections by NMS over the pooled stack detections."""
    fused = nms(pooled_detections(stack), params)
    return stack.with_images([replace(rec, detections=fused) for rec in stack])


def fuse_regions(stacks: Iterable[RegionStack], params: FusionParams = FusionParams(), workers: int = 1) -> List[RegionStack]:
    stacks = list(stacks)
    if workers <= 1:
        return [fuse_region(s, params) for s in stacks]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda s: fuse_region(s, params), stacks))
