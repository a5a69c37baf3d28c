"""Multi-illumination defect detection: data model, fusion, metrics and studies."""

__version__ = "0.1.0"

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
    box_area,
    condition_index,
)
from .metrics import (
    MatchCounts,
    MetricRow,
    PRPoint,
    average_precision,
    iou,
    match_detections,
    pr_curve,
    precision_recall_f1,
)
from .fusion import FusionParams, fuse_region, nms
