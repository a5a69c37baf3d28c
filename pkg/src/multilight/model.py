"""Domain types for multi-illumination region stacks.

Boxes use continuous pixel coordinates with the origin at the top-left
corner, x to the right and y downwards.  Area is ``width * height`` with no
``+1`` pixel correction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Tuple


class ModelError(ValueError):
    """Raised when a domain object would violate one of its invariants."""


class Modality(enum.IntEnum):
    C = 0
    UD = 1
    LR = 2
    UDLR = 3

    @classmethod
    def parse(cls, name: str) -> "Modality":
        try:
            return cls[name]
        except KeyError:
            raise ModelError(f"unknown modality {name!r}") from None


class Exposure(enum.IntEnum):
    low = 0
    medium = 1
    high = 2

    @classmethod
    def parse(cls, name: str) -> "Exposure":
        try:
            return cls[name]
        except KeyError:
            raise ModelError(f"unknown exposure {name!r}") from None


@dataclass(frozen=True, order=True)
class LightingCondition:
    modality: Modality
    exposure: Exposure

    @property
    def index(self) -> int:
        return condition_index(self)

    @classmethod
    def from_index(cls, index: int) -> "LightingCondition":
        if not 0 <= index < 12:
            raise ModelError(f"condition index out of range: {index}")
        return cls(Modality(index // 3), Exposure(index % 3))

    @property
    def label(self) -> str:
        return f"{self.modality.name}/{self.exposure.name}"

    def __str__(self) -> str:
        return self.label


def condition_index(condition: LightingCondition) -> int:
    return 3 * int(condition.modality) + int(condition.exposure)


CONDITIONS: Tuple[LightingCondition, ...] = tuple(
    LightingCondition(m, e) for m in Modality for e in Exposure
)


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        coords = tuple(float(c) for c in (self.x_min, self.y_min, self.x_max, self.y_max))
        for name, value in zip(("x_min", "y_min", "x_max", "y_max"), coords):
            object.__setattr__(self, name, value)
        if not all(math.isfinite(c) for c in coords):
            raise ModelError(f"box coordinates must be finite: {coords}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ModelError(f"box must have positive extent: {coords}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return box_area(self)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def box_area(box: BoundingBox) -> float:
    return (box.x_max - box.x_min) * (box.y_max - box.y_min)


@dataclass(frozen=True)
class Annotation:
    box: BoundingBox
    defect_id: str
    source_condition: LightingCondition


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    confidence: float

    def __post_init__(self):
        object.__setattr__(self, "confidence", float(self.confidence))
        if not (0.0 <= self.confidence <= 1.0):
            raise ModelError(f"confidence must lie in [0, 1], got {self.confidence!r}")


@dataclass(frozen=True)
class DetectionSet:
    """Ordered detections (insertion order is kept)."""

    items: Tuple[Detection, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[Detection]:
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]

    @property
    def boxes(self) -> Tuple[BoundingBox, ...]:
        return tuple(d.box for d in self.items)

    @property
    def confidences(self) -> Tuple[float, ...]:
        return tuple(d.confidence for d in self.items)

    @classmethod
    def concat(cls, sets: Iterable["DetectionSet"]) -> "DetectionSet":
        return cls(tuple(d for s in sets for d in s.items))


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    region_id: str
    condition: LightingCondition
    uri: str
    annotations: Tuple[Annotation, ...] = ()
    detections: Optional[DetectionSet] = None
    # simulator ground truth: ids of defects that are visible under this
    # image's condition; None when unknown (real data)
    visible_defects: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "annotations", tuple(self.annotations))
        if self.visible_defects is not None:
            object.__setattr__(self, "visible_defects", tuple(self.visible_defects))
        ids = [a.defect_id for a in self.annotations]
        if len(set(ids)) != len(ids):
            raise ModelError(f"duplicate defect_id in image {self.image_id}")

    @property
    def ground_truth(self) -> Tuple[BoundingBox, ...]:
        return tuple(a.box for a in self.annotations)


def image_id_for(region_id: str, condition: LightingCondition) -> str:
    return f"{region_id}:{condition.modality.name}:{condition.exposure.name}"


@dataclass(frozen=True)
class RegionStack:
    """The 12 registered images of one region, ordered by condition index."""

    region_id: str
    object_id: str
    visible: bool
    images: Tuple[ImageRecord, ...] = field(default=())

    def __post_init__(self):
        images = tuple(self.images)
        if len(images) != 12:
            raise ModelError(
                f"region {self.region_id} must hold 12 images, got {len(images)}"
            )
        seen = set()
        for rec in images:
            if rec.region_id != self.region_id:
                raise ModelError(
                    f"image {rec.image_id} belongs to region {rec.region_id}, "
                    f"not {self.region_id}"
                )
            if rec.condition in seen:
                raise ModelError(
                    f"duplicate condition {rec.condition} in region {self.region_id}"
                )
            seen.add(rec.condition)
        if not self.visible and any(rec.annotations for rec in images):
            raise ModelError(
                f"region {self.region_id} is flagged invisible but carries annotations"
            )
        object.__setattr__(
            self, "images", tuple(sorted(images, key=lambda r: r.condition.index))
        )

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self.images)

    def image(self, condition: LightingCondition) -> ImageRecord:
        return self.images[condition.index]

    def with_images(self, images: Sequence[ImageRecord]) -> "RegionStack":
        return RegionStack(self.region_id, self.object_id, self.visible, tuple(images))

    def is_propagated(self) -> bool:
        """True when every image carries the same box for every defect."""
        boxes = [{a.defect_id: a.box for a in rec.annotations} for rec in self.images]
        return all(b == boxes[0] for b in boxes[1:])
