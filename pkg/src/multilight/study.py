"""Studies 1-4: selection + detections + optional fusion + metrics."""

from __future__ import annotations

import statistics
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

from ._random import derive_seed
from .dataset import (
    DatasetManifest,
    SelectionSpec,
    SplitAssignment,
    select_images,
)
from .fusion import FusionParams, fuse_region
from .metrics import (
    DEFAULT_PR_GRID,
    MatchCounts,
    MetricRow,
    Scored,
    average_precision,
    match_detections,
    precision_recall_f1,
)
from .model import DetectionSet, ImageRecord, Modality, RegionStack

REPORT_FORMAT_VERSION = 1

TRAIN_LABELS = {
    "random_modalities": "All samples, 3 rand. modalities",
    "quarter_regions": "Quarter of samples, All modalities",
    "all": "All Train",
    "all+fusion": "All Train + Late-fusion",
}


class StudyError(ValueError):
    pass


class MissingDetectionsError(StudyError):
    def __init__(self, image_ids: Sequence[str]):
        self.image_ids = list(image_ids)
        shown = ", ".join(self.image_ids[:20])
        more = f" (+{len(self.image_ids) - 20} more)" if len(self.image_ids) > 20 else ""
        super().__init__(f"missing detections for {len(self.image_ids)} image(s): {shown}{more}")


@dataclass(frozen=True)
class Evaluation:
    counts: MatchCounts
    scored: Tuple[Scored, ...]
    gt_count: int
    image_count: int

    def metrics(self, ap_thresholds: Optional[Sequence[float]] = None) -> MetricRow:
        row = precision_recall_f1(self.counts)
        ap = average_precision(self.scored, self.gt_count, ap_thresholds)
        return MetricRow(row.precision, row.recall, row.f1, ap)


def evaluate_images(
    images: Sequence[ImageRecord], confidence_cutoff: float = 0.7, iou_threshold: float = 0.5
) -> Evaluation:
    """Match each image's detections to its own annotations and pool the results.

    All detections enter the scored list used for AP; the TP/FP/FN counts only
    use detections at or above ``confidence_cutoff``.  Greedy matching visits
    detections by decreasing confidence, so the labels of the kept prefix are
    the same as when matching the filtered set alone.
    """
    missing = [rec.image_id for rec in images if rec.detections is None]
    if missing:
        raise MissingDetectionsError(missing)
    tp = fp = gt = 0
    scored: List[Scored] = []
    for rec in images:
        result = match_detections(rec.detections, rec.ground_truth, iou_threshold)
        gt += len(rec.annotations)
        for conf, label in zip(result.confidences, result.labels):
            scored.append((conf, label))
            if conf >= confidence_cutoff:
                if label:
                    tp += 1
                else:
                    fp += 1
    return Evaluation(MatchCounts(tp, fp, gt - tp), tuple(scored), gt, len(images))


# -- detection sources ----------------------------------------------------------------


@dataclass(frozen=True)
class Experiment:
    """What a detector was trained on, as seen by a detection source."""

    train: str
    trial: int
    seed: int
    train_image_ids: Tuple[str, ...] = ()


DetectionSource = Union[Mapping[str, DetectionSet], Callable[[Experiment, Sequence[ImageRecord]], Mapping[str, DetectionSet]]]


class SimulatedSource:
    """Runs the simulated detector on demand, one noise model per training descriptor."""

    def __init__(self, sim_config):
        self.sim_config = sim_config

    def __call__(self, experiment: Experiment, images: Sequence[ImageRecord]) -> Dict[str, DetectionSet]:
        from .simulator import _simulate_image

        noise = self.sim_config.detector_for(experiment.train)
        W = float(self._meta["image_width"])
        H = float(self._meta["image_height"])
        return {rec.image_id: _simulate_image(rec, noise, experiment.seed, W, H) for rec in images}

    def bind(self, manifest: DatasetManifest) -> "SimulatedSource":
        self._meta = manifest.metadata
        return self


def _detections_for(source: DetectionSource, experiment: Experiment, images: Sequence[ImageRecord]):
    if callable(source):
        return source(experiment, images)
    return source


def _with_detections(images: Sequence[ImageRecord], detections: Mapping[str, DetectionSet]) -> List[ImageRecord]:
    missing = [rec.image_id for rec in images if rec.image_id not in detections]
    if missing:
        raise MissingDetectionsError(missing)
    return [replace(rec, detections=detections[rec.image_id]) for rec in images]


# -- configuration and report ---------------------------------------------------------


@dataclass(frozen=True)
class StudyConfig:
    study_id: int
    seed: int = 0
    confidence_cutoff: float = 0.7
    iou_threshold: float = 0.5
    fusion: FusionParams = FusionParams()
    trials: int = 5
    partition: str = "test"
    ap_mode: str = "distinct"
    ap_grid: Tuple[float, ...] = DEFAULT_PR_GRID
    aggregation: str = "image"
    per_region_exposure: bool = False
    modalities: Tuple[Modality, ...] = tuple(Modality)

    def __post_init__(self):
        if self.study_id not in (1, 2, 3, 4):
            raise StudyError(f"unknown study id {self.study_id!r}")
        if self.trials < 1:
            raise StudyError("trials must be >= 1")
        if self.ap_mode not in ("distinct", "grid"):
            raise StudyError(f"unknown ap mode {self.ap_mode!r}")
        if self.aggregation not in ("image", "region"):
            raise StudyError(f"unknown aggregation {self.aggregation!r}")
        if not 0.0 <= self.confidence_cutoff <= 1.0:
            raise StudyError("confidence cutoff must lie in [0, 1]")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise StudyError("IoU threshold must lie in (0, 1]")

    @property
    def ap_thresholds(self) -> Optional[Tuple[float, ...]]:
        return self.ap_grid if self.ap_mode == "grid" else None


@dataclass(frozen=True)
class StudyRow:
    train: str
    test: str
    metrics: MetricRow  # precision/recall/F1 of the first trial, AP = mean
    ap_trials: Tuple[float, ...]
    counts: MatchCounts
    gt_count: int
    image_count: int
    trial_seeds: Tuple[int, ...]
    fused: bool = False

    @property
    def ap_std(self) -> Optional[float]:
        if len(self.ap_trials) < 2:
            return None
        return statistics.stdev(self.ap_trials)

    @property
    def train_label(self) -> str:
        return TRAIN_LABELS.get(self.train, self.train)


@dataclass
class StudyReport:
    study_id: int
    rows: List[StudyRow]
    provenance: "OrderedDict[str, object]"
    # first-trial evaluations, keyed by (train, test), kept for PR curves
    evaluations: Dict[Tuple[str, str], Evaluation] = field(default_factory=dict)
    test_image_ids: Dict[str, Tuple[str, ...]] = field(default_factory=dict)


# -- the studies ------------------------------------------------------------------------


def evaluation_images(manifest: DatasetManifest, split: Optional[SplitAssignment], config: StudyConfig, modality: Optional[Modality]) -> List[ImageRecord]:
    """Test-side images for one modality (or all of them); shared by Studies 1-4."""
    part = config.partition if split is not None else None
    if modality is None:
        return select_images(manifest, SelectionSpec("full"), split, part)
    return select_images(manifest, SelectionSpec("single_modality", modality=modality), split, part)


def _train_ids(manifest, split, spec: SelectionSpec) -> Tuple[str, ...]:
    part = "train" if split is not None else None
    return tuple(rec.image_id for rec in select_images(manifest, spec, split, part))


def _row(train, test, evaluations: List[Evaluation], seeds, config: StudyConfig, fused=False) -> StudyRow:
    first = evaluations[0]
    aps = tuple(average_precision(e.scored, e.gt_count, config.ap_thresholds) for e in evaluations)
    m = precision_recall_f1(first.counts)
    ap = aps[0] if len(aps) == 1 else statistics.fmean(aps)
    return StudyRow(
        train=train,
        test=test,
        metrics=MetricRow(m.precision, m.recall, m.f1, ap),
        ap_trials=aps,
        counts=first.counts,
        gt_count=first.gt_count,
        image_count=first.image_count,
        trial_seeds=tuple(seeds),
        fused=fused,
    )


def fuse_images(images: Sequence[ImageRecord], params: FusionParams, aggregation: str) -> List[ImageRecord]:
    by_region: "OrderedDict[str, List[ImageRecord]]" = OrderedDict()
    for rec in images:
        by_region.setdefault(rec.region_id, []).append(rec)
    out: List[ImageRecord] = []
    for region_id, recs in by_region.items():
        if len(recs) != 12:
            raise StudyError(f"fusion needs all 12 images of region {region_id}, got {len(recs)}")
        # object id and visibility flag do not affect fusion
        fused = fuse_region(RegionStack(region_id, "", True, tuple(recs)), params)
        out.extend(fused.images if aggregation == "image" else fused.images[:1])
    return out


def run_study(
    manifest: DatasetManifest,
    source: DetectionSource,
    config: StudyConfig,
    split: Optional[SplitAssignment] = None,
) -> StudyReport:
    if isinstance(source, SimulatedSource):
        source.bind(manifest)
    provenance: "OrderedDict[str, object]" = OrderedDict(
        [
            ("format_version", REPORT_FORMAT_VERSION),
            ("study_id", config.study_id),
            ("seed", config.seed),
            ("confidence_cutoff", config.confidence_cutoff),
            ("iou_threshold", config.iou_threshold),
            ("fusion_theta", config.fusion.theta),
            ("ap_mode", config.ap_mode),
            ("aggregation", config.aggregation),
            ("partition", config.partition if split is not None else "all"),
            ("split_seed", split.seed if split is not None else None),
            ("exposure_scope", "region" if config.per_region_exposure else "image"),
            ("regions", len(manifest.regions)),
        ]
    )
    report = StudyReport(config.study_id, [], provenance)

    def evaluate(train: str, trial: int, seed: int, images, train_ids=(), fused=False) -> Evaluation:
        exp = Experiment(train, trial, seed, tuple(train_ids))
        images = _with_detections(images, _detections_for(source, exp, images))
        if fused:
            images = fuse_images(images, config.fusion, config.aggregation)
        return evaluate_images(images, config.confidence_cutoff, config.iou_threshold)

    def add(train, test, evaluations, seeds, fused=False):
        report.rows.append(_row(train, test, evaluations, seeds, config, fused))
        report.evaluations[(train, test)] = evaluations[0]

    mods = config.modalities
    if config.study_id == 1:
        for m in mods:
            imgs = evaluation_images(manifest, split, config, m)
            report.test_image_ids[m.name] = tuple(r.image_id for r in imgs)
            spec = SelectionSpec("single_modality", modality=m)
            seed = derive_seed(config.seed, "study1", m.name)
            add(m.name, m.name, [evaluate(m.name, 0, seed, imgs, _train_ids(manifest, split, spec))], [seed])
    elif config.study_id == 2:
        for m in mods:
            imgs = evaluation_images(manifest, split, config, m)
            report.test_image_ids[m.name] = tuple(r.image_id for r in imgs)
            for strategy in ("random_modalities", "quarter_regions"):
                evals, seeds = [], []
                for trial in range(config.trials):
                    # the same training subsets are reused for every test modality
                    seed = derive_seed(config.seed, "study2", strategy, trial)
                    spec = SelectionSpec(strategy, seed=seed, per_region_exposure=config.per_region_exposure)
                    evals.append(evaluate(strategy, trial, seed, imgs, _train_ids(manifest, split, spec)))
                    seeds.append(seed)
                add(strategy, m.name, evals, seeds)
    elif config.study_id == 3:
        seed = derive_seed(config.seed, "all")
        train_ids = _train_ids(manifest, split, SelectionSpec("full"))
        for m in mods:
            imgs = evaluation_images(manifest, split, config, m)
            report.test_image_ids[m.name] = tuple(r.image_id for r in imgs)
            add("all", m.name, [evaluate("all", 0, seed, imgs, train_ids)], [seed])
    else:
        seed = derive_seed(config.seed, "all")
        train_ids = _train_ids(manifest, split, SelectionSpec("full"))
        imgs = evaluation_images(manifest, split, config, None)
        report.test_image_ids["all"] = tuple(r.image_id for r in imgs)
        add("all", "All Test", [evaluate("all", 0, seed, imgs, train_ids)], [seed])
        add("all+fusion", "All Test", [evaluate("all", 0, seed, imgs, train_ids, fused=True)], [seed], fused=True)
    return report
