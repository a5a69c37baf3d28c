import math

import pytest

from multilight.model import (
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
    box_area,
    condition_index,
    image_id_for,
)


def make_stack(region_id="r1", annotations=(), visible=True, conditions=CONDITIONS):
    images = [
        ImageRecord(image_id_for(region_id, c), region_id, c, f"mem://{region_id}/{c.index}", annotations)
        for c in conditions
    ]
    return RegionStack(region_id, "o1", visible, images)


@pytest.mark.parametrize(
    "modality, exposure, expected",
    [
        (Modality.C, Exposure.low, 0),
        (Modality.UDLR, Exposure.high, 11),
        (Modality.UD, Exposure.medium, 4),
    ],
)
def test_condition_index(modality, exposure, expected):
    assert condition_index(LightingCondition(modality, exposure)) == expected


def test_condition_index_is_a_bijection():
    indices = [c.index for c in CONDITIONS]
    assert indices == list(range(12))
    for c in CONDITIONS:
        assert LightingCondition.from_index(c.index) == c


def test_enum_codes_are_stable():
    assert [m.name for m in Modality] == ["C", "UD", "LR", "UDLR"]
    assert [int(m) for m in Modality] == [0, 1, 2, 3]
    assert [e.name for e in Exposure] == ["low", "medium", "high"]


@pytest.mark.parametrize(
    "coords, area",
    [((0, 0, 10, 10), 100), ((0, 0, 1, 1), 1), ((2.5, 0, 7.5, 4), 20)],
)
def test_box_area(coords, area):
    assert box_area(BoundingBox(*coords)) == area


@pytest.mark.parametrize(
    "coords",
    [(0, 0, 0, 5), (0, 0, 5, 0), (5, 0, 1, 3), (0, 0, math.inf, 1), (0, math.nan, 1, 1)],
)
def test_invalid_boxes_rejected(coords):
    with pytest.raises(ModelError):
        BoundingBox(*coords)


@pytest.mark.parametrize("conf", [-0.01, 1.01, math.nan])
def test_detection_confidence_range(conf):
    with pytest.raises(ModelError):
        Detection(BoundingBox(0, 0, 1, 1), conf)


def test_detection_set_keeps_insertion_order():
    dets = [Detection(BoundingBox(i, 0, i + 1, 1), 0.5) for i in range(5)]
    ds = DetectionSet(dets)
    assert list(ds) == dets
    assert len(DetectionSet.concat([ds, ds])) == 10


def test_stack_orders_images_by_condition():
    stack = make_stack(conditions=list(reversed(CONDITIONS)))
    assert [r.condition.index for r in stack] == list(range(12))


def test_stack_rejects_duplicate_condition():
    conds = list(CONDITIONS[:11]) + [CONDITIONS[0]]
    with pytest.raises(ModelError, match="duplicate condition"):
        make_stack(conditions=conds)


def test_stack_needs_twelve_images():
    with pytest.raises(ModelError, match="12 images"):
        make_stack(conditions=CONDITIONS[:11])


def test_invisible_stack_cannot_carry_annotations():
    ann = Annotation(BoundingBox(0, 0, 2, 2), "d0", CONDITIONS[0])
    with pytest.raises(ModelError, match="invisible"):
        make_stack(annotations=(ann,), visible=False)


def test_duplicate_defect_id_in_image():
    ann = Annotation(BoundingBox(0, 0, 2, 2), "d0", CONDITIONS[0])
    with pytest.raises(ModelError):
        ImageRecord("i", "r", CONDITIONS[0], "u", (ann, ann))
