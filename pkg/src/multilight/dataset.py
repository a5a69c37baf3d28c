"""Manifest/detection/split file formats and the data-selection protocols.

Manifest files are JSON Lines: a ``manifest`` header, then for every object
an ``object`` record followed by one ``image`` record per (region,
condition).  Keys appear in a fixed order and unknown keys are rejected.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, OrderedDict
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple

from ._random import rng_for
from .model import (
    CONDITIONS,
    Annotation,
    BoundingBox,
    Detection,
    DetectionSet,
    Exposure,
    ImageRecord,
    LightingCondition,
    Modality,
    ModelError,
    RegionStack,
)

SCHEMA_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)

HEADER_FIELDS = ("record_kind", "schema_version", "metadata")
OBJECT_FIELDS = ("record_kind", "object_id")
IMAGE_FIELDS = (
    "record_kind",
    "object_id",
    "region_id",
    "image_id",
    "modality",
    "exposure",
    "uri",
    "visible",
    "annotations",
    "visible_defects",
    "detections",
)
DETECTION_COLUMNS = ("image_id", "x_min", "y_min", "x_max", "y_max", "confidence")


class FormatError(ValueError):
    """A file that does not follow its record format."""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class PropagationError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    regions: Tuple[RegionStack, ...] = ()
    metadata: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        ids = [r.region_id for r in self.regions]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise ModelError(f"duplicate region_id {dup!r}")

    @property
    def objects(self) -> "OrderedDict[str, List[RegionStack]]":
        out: OrderedDict[str, List[RegionStack]] = OrderedDict()
        for r in self.regions:
            out.setdefault(r.object_id, []).append(r)
        return out

    def images(self) -> List[ImageRecord]:
        return [rec for r in self.regions for rec in r.images]

    def __len__(self) -> int:
        return len(self.regions)

    def with_regions(self, regions: Iterable[RegionStack]) -> "DatasetManifest":
        return DatasetManifest(tuple(regions), self.metadata)


# -- manifest I/O -----------------------------------------------------------


def _image_record_json(object_id: str, region: RegionStack, rec: ImageRecord) -> dict:
    anns = [
        [a.defect_id, *a.box.as_tuple(), a.source_condition == rec.condition]
        for a in rec.annotations
    ]
    dets = None
    if rec.detections is not None:
        dets = [[*d.box.as_tuple(), d.confidence] for d in rec.detections]
    vis = list(rec.visible_defects) if rec.visible_defects is not None else None
    values = (
        "image",
        object_id,
        region.region_id,
        rec.image_id,
        rec.condition.modality.name,
        rec.condition.exposure.name,
        rec.uri,
        region.visible,
        anns,
        vis,
        dets,
    )
    return dict(zip(IMAGE_FIELDS, values))


def _dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def save_manifest(manifest: DatasetManifest, stream: TextIO) -> None:
    header = dict(zip(HEADER_FIELDS, ("manifest", SCHEMA_VERSION, dict(manifest.metadata))))
    stream.write(_dumps(header) + "\n")
    for object_id, regions in manifest.objects.items():
        stream.write(_dumps(dict(zip(OBJECT_FIELDS, ("object", object_id)))) + "\n")
        for region in regions:
            for rec in region.images:
                stream.write(_dumps(_image_record_json(object_id, region, rec)) + "\n")


def dumps_manifest(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    save_manifest(manifest, buf)
    return buf.getvalue()


def _check_fields(rec, expected: Sequence[str], lineno: int) -> None:
    if not isinstance(rec, dict):
        raise FormatError("record is not an object", lineno)
    keys = list(rec)
    for k in keys:
        if k not in expected:
            raise FormatError("unknown field", lineno, k)
    for k in expected:
        if k not in rec:
            raise FormatError("missing field", lineno, k)
    if keys != list(expected):
        raise FormatError(f"fields out of order, expected {list(expected)}", lineno)


def _number(value, lineno: int, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise FormatError(f"expected a number, got {value!r}", lineno, name)
    value = float(value)
    if not math.isfinite(value):
        raise FormatError("number must be finite", lineno, name)
    return value


def _parse_box(values, lineno: int, name: str) -> BoundingBox:
    try:
        return BoundingBox(*(_number(v, lineno, name) for v in values))
    except ModelError as exc:
        raise FormatError(str(exc), lineno, name) from None


def _parse_image(rec: dict, lineno: int):
    for name in ("object_id", "region_id", "image_id", "uri"):
        if not isinstance(rec[name], str) or not rec[name]:
            raise FormatError("expected a non-empty string", lineno, name)
    try:
        condition = LightingCondition(
            Modality.parse(rec["modality"]), Exposure.parse(rec["exposure"])
        )
    except (ModelError, TypeError) as exc:
        raise FormatError(str(exc), lineno, "modality/exposure") from None
    if not isinstance(rec["visible"], bool):
        raise FormatError("expected true/false", lineno, "visible")

    anns = []
    if not isinstance(rec["annotations"], list):
        raise FormatError("expected a list", lineno, "annotations")
    for entry in rec["annotations"]:
        if not isinstance(entry, list) or len(entry) != 6:
            raise FormatError(
                "expected [defect_id, x_min, y_min, x_max, y_max, source]", lineno, "annotations"
            )
        defect_id, *coords, source = entry
        if not isinstance(defect_id, str) or not isinstance(source, bool):
            raise FormatError("bad defect_id or source flag", lineno, "annotations")
        anns.append((defect_id, _parse_box(coords, lineno, "annotations"), source))

    vis = rec["visible_defects"]
    if vis is not None and not (isinstance(vis, list) and all(isinstance(v, str) for v in vis)):
        raise FormatError("expected null or a list of defect ids", lineno, "visible_defects")

    dets = rec["detections"]
    if dets is not None:
        if not isinstance(dets, list):
            raise FormatError("expected null or a list", lineno, "detections")
        parsed = []
        for entry in dets:
            if not isinstance(entry, list) or len(entry) != 5:
                raise FormatError("expected [x_min, y_min, x_max, y_max, confidence]", lineno, "detections")
            try:
                parsed.append(
                    Detection(_parse_box(entry[:4], lineno, "detections"), _number(entry[4], lineno, "detections"))
                )
            except ModelError as exc:
                raise FormatError(str(exc), lineno, "detections") from None
        dets = DetectionSet(tuple(parsed))
    return condition, anns, (tuple(vis) if vis is not None else None), dets


def _build_region(region_id: str, object_id: str, visible: bool, rows, first_line: int) -> RegionStack:
    # source condition of each defect = first image flagged as its source
    sources: Dict[str, LightingCondition] = {}
    for _, condition, anns, _, _, _ in sorted(rows, key=lambda r: r[1].index):
        for defect_id, _, is_source in anns:
            if is_source:
                sources.setdefault(defect_id, condition)
    images = []
    for lineno, condition, anns, vis, dets, (image_id, uri) in rows:
        annotations = []
        for defect_id, box, is_source in anns:
            src = condition if is_source else sources.get(defect_id)
            if src is None:
                raise FormatError(
                    f"defect {defect_id!r} has no source image in region {region_id!r}",
                    lineno,
                    "annotations",
                )
            annotations.append(Annotation(box, defect_id, src))
        try:
            images.append(
                ImageRecord(image_id, region_id, condition, uri, tuple(annotations), dets, vis)
            )
        except ModelError as exc:
            raise FormatError(str(exc), lineno, "annotations") from None
    try:
        return RegionStack(region_id, object_id, visible, tuple(images))
    except ModelError as exc:
        raise FormatError(str(exc), first_line) from None


def load_manifest(stream: TextIO) -> DatasetManifest:
    metadata = None
    current_object = None
    regions: "OrderedDict[str, dict]" = OrderedDict()
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", lineno) from None
        kind = rec.get("record_kind") if isinstance(rec, dict) else None
        if metadata is None:
            if kind != "manifest":
                raise FormatError("first record must be the manifest header", lineno, "record_kind")
            _check_fields(rec, HEADER_FIELDS, lineno)
            if rec["schema_version"] != SCHEMA_VERSION:
                raise FormatError(f"unsupported schema version {rec['schema_version']!r}", lineno, "schema_version")
            if not isinstance(rec["metadata"], dict):
                raise FormatError("expected an object", lineno, "metadata")
            metadata = rec["metadata"]
        elif kind == "object":
            _check_fields(rec, OBJECT_FIELDS, lineno)
            if not isinstance(rec["object_id"], str) or not rec["object_id"]:
                raise FormatError("expected a non-empty string", lineno, "object_id")
            current_object = rec["object_id"]
        elif kind == "image":
            _check_fields(rec, IMAGE_FIELDS, lineno)
            if current_object is None:
                raise FormatError("image record before any object record", lineno)
            if rec["object_id"] != current_object:
                raise FormatError(
                    f"image belongs to object {rec['object_id']!r} inside object {current_object!r}",
                    lineno,
                    "object_id",
                )
            condition, anns, vis, dets = _parse_image(rec, lineno)
            slot = regions.setdefault(
                rec["region_id"],
                {"object_id": current_object, "visible": rec["visible"], "rows": [], "line": lineno},
            )
            if slot["object_id"] != current_object:
                raise FormatError(f"region {rec['region_id']!r} split across objects", lineno, "region_id")
            if slot["visible"] != rec["visible"]:
                raise FormatError("inconsistent visibility flag within region", lineno, "visible")
            if any(r[1] == condition for r in slot["rows"]):
                raise FormatError(
                    f"duplicate condition {condition} for region {rec['region_id']!r}",
                    lineno,
                    "modality/exposure",
                )
            slot["rows"].append((lineno, condition, anns, vis, dets, (rec["image_id"], rec["uri"])))
        else:
            raise FormatError(f"unknown record kind {kind!r}", lineno, "record_kind")
    if metadata is None:
        raise FormatError("empty manifest (missing header)")
    stacks = [
        _build_region(rid, s["object_id"], s["visible"], s["rows"], s["line"])
        for rid, s in regions.items()
    ]
    image_ids = Counter(rec.image_id for st in stacks for rec in st.images)
    dup = [i for i, c in image_ids.items() if c > 1]
    if dup:
        raise FormatError(f"duplicate image_id {dup[0]!r}")
    return DatasetManifest(tuple(stacks), metadata)


def loads_manifest(text: str) -> DatasetManifest:
    return load_manifest(io.StringIO(text))


# -- detections files -------------------------------------------------------


def write_detections(detections: Mapping[str, DetectionSet], stream: TextIO) -> None:
    """One detection per line; an image with no detections gets one blank-coordinate line."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(DETECTION_COLUMNS)
    for image_id, dets in detections.items():
        if not len(dets):
            writer.writerow([image_id, "", "", "", "", ""])
        for d in dets:
            writer.writerow([image_id, *map(repr, d.box.as_tuple()), repr(d.confidence)])


def read_detections(stream: TextIO) -> "OrderedDict[str, DetectionSet]":
    reader = csv.reader(stream)
    out: OrderedDict[str, List[Detection]] = OrderedDict()
    header = next(reader, None)
    if header is None or tuple(header) != DETECTION_COLUMNS:
        raise FormatError(f"header must be {','.join(DETECTION_COLUMNS)}", 1)
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(DETECTION_COLUMNS):
            raise FormatError(f"expected {len(DETECTION_COLUMNS)} columns, got {len(row)}", lineno)
        image_id, *rest = row
        if not image_id:
            raise FormatError("empty image_id", lineno, "image_id")
        items = out.setdefault(image_id, [])
        if all(v == "" for v in rest):
            continue
        values = []
        for name, v in zip(DETECTION_COLUMNS[1:], rest):
            try:
                values.append(float(v))
            except ValueError:
                raise FormatError(f"not a number: {v!r}", lineno, name) from None
            if not math.isfinite(values[-1]):
                raise FormatError("number must be finite", lineno, name)
        try:
            items.append(Detection(BoundingBox(*values[:4]), values[4]))
        except ModelError as exc:
            raise FormatError(str(exc), lineno) from None
    return OrderedDict((k, DetectionSet(tuple(v))) for k, v in out.items())


def detections_of(manifest: DatasetManifest) -> "OrderedDict[str, DetectionSet]":
    return OrderedDict(
        (rec.image_id, rec.detections) for rec in manifest.images() if rec.detections is not None
    )


def attach_detections(
    manifest: DatasetManifest, detections: Mapping[str, DetectionSet], strict: bool = True
) -> DatasetManifest:
    """Copy detections onto the matching image records.

    Images absent from ``detections`` keep ``detections=None``.  With
    ``strict`` an id that names no image in the manifest is an error.
    """
    known = {rec.image_id for rec in manifest.images()}
    if strict:
        unknown = [i for i in detections if i not in known]
        if unknown:
            raise ValueError(f"detections for unknown image ids: {', '.join(unknown[:10])}")
    regions = [
        st.with_images([replace(rec, detections=detections.get(rec.image_id)) for rec in st.images])
        for st in manifest.regions
    ]
    return manifest.with_regions(regions)


# -- annotation propagation --------------------------------------------------


def propagate_annotations(stack: RegionStack) -> RegionStack:
    """Copy every annotated defect box onto all 12 images of the stack."""
    if not stack.visible:
        return stack
    defects: "OrderedDict[str, Annotation]" = OrderedDict()
    for rec in stack.images:
        for ann in rec.annotations:
            prev = defects.get(ann.defect_id)
            if prev is None:
                defects[ann.defect_id] = ann
            elif prev.box != ann.box:
                raise PropagationError(
                    f"region {stack.region_id}: defect {ann.defect_id!r} has conflicting boxes "
                    f"{prev.box.as_tuple()} ({prev.source_condition}) and {ann.box.as_tuple()} "
                    f"({rec.condition})"
                )
    anns = tuple(defects.values())
    return stack.with_images([replace(rec, annotations=anns) for rec in stack.images])


def propagate_manifest(manifest: DatasetManifest) -> DatasetManifest:
    return manifest.with_regions(propagate_annotations(r) for r in manifest.regions)


# -- object-wise split --------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    assignment: Mapping[str, str]
    seed: int
    ratios: Tuple[float, float, float] = DEFAULT_RATIOS

    def partition_of(self, object_id: str) -> str:
        return self.assignment[object_id]

    def objects_in(self, partition: str) -> List[str]:
        return [o for o, p in self.assignment.items() if p == partition]

    def counts(self) -> Dict[str, int]:
        c = Counter(self.assignment.values())
        return {name: c.get(name, 0) for name in SPLIT_NAMES}


def apportion(total: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment; ties go to the earlier entry."""
    exact = [Fraction(repr(float(r))) * total for r in ratios]
    counts = [math.floor(q) for q in exact]
    left = total - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def split_objectwise(
    manifest: DatasetManifest, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 0
) -> SplitAssignment:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    objects = list(manifest.objects)
    if len(objects) < 3:
        raise ValueError(f"need at least 3 objects to split, got {len(objects)}")
    perm = rng_for(seed, "split").permutation(len(objects))
    counts = apportion(len(objects), ratios)
    names = [name for name, n in zip(SPLIT_NAMES, counts) for _ in range(n)]
    assignment = {objects[int(i)]: names[k] for k, i in enumerate(perm)}
    return SplitAssignment({o: assignment[o] for o in objects}, seed, ratios)


def save_split(split: SplitAssignment, stream: TextIO) -> None:
    stream.write(_dumps({"record_kind": "split", "seed": split.seed, "ratios": list(split.ratios)}) + "\n")
    for object_id, name in split.assignment.items():
        stream.write(_dumps({"object_id": object_id, "split": name}) + "\n")


def load_split(stream: TextIO) -> SplitAssignment:
    header = None
    assignment: Dict[str, str] = {}
    for lineno, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON ({exc.msg})", lineno) from None
        if header is None:
            _check_fields(rec, ("record_kind", "seed", "ratios"), lineno)
            if rec["record_kind"] != "split":
                raise FormatError("first record must be the split header", lineno, "record_kind")
            header = rec
            continue
        _check_fields(rec, ("object_id", "split"), lineno)
        if rec["split"] not in SPLIT_NAMES:
            raise FormatError(f"unknown split {rec['split']!r}", lineno, "split")
        if rec["object_id"] in assignment:
            raise FormatError(f"object {rec['object_id']!r} listed twice", lineno, "object_id")
        assignment[rec["object_id"]] = rec["split"]
    if header is None:
        raise FormatError("empty split file")
    return SplitAssignment(assignment, header["seed"], tuple(header["ratios"]))


def restrict(manifest: DatasetManifest, split: Optional[SplitAssignment], partition: Optional[str]) -> DatasetManifest:
    if split is None or partition is None:
        return manifest
    if partition not in SPLIT_NAMES:
        raise ValueError(f"unknown partition {partition!r}")
    missing = [o for o in manifest.objects if o not in split.assignment]
    if missing:
        raise ValueError(f"objects missing from split: {', '.join(missing[:10])}")
    return manifest.with_regions(r for r in manifest.regions if split.assignment[r.object_id] == partition)


# -- image selection ------------------------------------------------------------

STRATEGIES = ("single_modality", "random_modalities", "quarter_regions", "full")


@dataclass(frozen=True)
class SelectionSpec:
    strategy: str
    modality: Optional[Modality] = None
    seed: Optional[int] = None
    # one exposure shared by the three chosen modalities of a region
    per_region_exposure: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown selection strategy {self.strategy!r}")
        if self.strategy == "single_modality" and self.modality is None:
            raise ValueError("single_modality needs a modality")
        if self.strategy in ("random_modalities", "quarter_regions") and self.seed is None:
            raise ValueError(f"{self.strategy} needs a seed")


def _random_modality_images(region: RegionStack, spec: SelectionSpec) -> List[ImageRecord]:
    rng = rng_for(spec.seed, "random_modalities", region.region_id)
    modalities = sorted(int(m) for m in rng.choice(4, size=3, replace=False))
    if spec.per_region_exposure:
        shared = int(rng.integers(3))
        exposures = [shared] * 3
    else:
        exposures = [int(e) for e in rng.integers(3, size=3)]
    return [
        region.image(LightingCondition(Modality(m), Exposure(e)))
        for m, e in zip(modalities, exposures)
    ]


def select_regions(manifest: DatasetManifest, spec: SelectionSpec) -> List[RegionStack]:
    regions = list(manifest.regions)
    if spec.strategy != "quarter_regions":
        return regions
    keep = sorted(int(i) for i in rng_for(spec.seed, "quarter_regions").permutation(len(regions))[: len(regions) // 4])
    return [regions[i] for i in keep]


def select_images(
    manifest: DatasetManifest,
    spec: SelectionSpec,
    split: Optional[SplitAssignment] = None,
    partition: Optional[str] = None,
) -> List[ImageRecord]:
    """Image records kept by ``spec`` within one partition (or the whole manifest)."""
    manifest = restrict(manifest, split, partition)
    if spec.strategy == "single_modality":
        m = Modality(spec.modality)
        return [rec for r in manifest.regions for rec in r.images if rec.condition.modality == m]
    if spec.strategy == "random_modalities":
        return [rec for r in manifest.regions for rec in _random_modality_images(r, spec)]
    return [rec for r in select_regions(manifest, spec) for rec in r.images]


# -- statistics --------------------------------------------------------------------


def annotation_frequency(manifest: DatasetManifest) -> Dict[LightingCondition, float]:
    """Share of defects whose annotator-chosen image was taken under each condition."""
    counts = Counter()
    for region in manifest.regions:
        sources = {}
        for rec in region.images:
            for ann in rec.annotations:
                sources.setdefault(ann.defect_id, ann.source_condition)
        counts.update(sources.values())
    total = sum(counts.values())
    return {c: (counts[c] / total if total else 0.0) for c in CONDITIONS}
