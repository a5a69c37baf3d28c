"""Synthetic multi-illumination datasets and a noisy stand-in detector.

Each defect is realized as visible or not under each of the 12 lighting
conditions.  The detector only ever fires on defects visible under the
image's condition, adds Gaussian corner jitter and Poisson clutter.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ._random import rng_for
from .dataset import DatasetManifest
from .model import (
    CONDITIONS,
    Annotation,
    BoundingBox,
    Detection,
    DetectionSet,
    ImageRecord,
    Modality,
    RegionStack,
    image_id_for,
)


class ConfigError(ValueError):
    pass


def _per_condition(values, name: str) -> Tuple[float, ...]:
    """Accept a scalar, a 4-entry per-modality list, a 12-entry list or a
    ``{modality: value}`` / ``{"UD/low": value}`` mapping."""
    if isinstance(values, Mapping):
        out = [None] * 12
        for key, v in values.items():
            key = str(key)
            if "/" in key:
                mod, exp = key.split("/", 1)
                idxs = [c.index for c in CONDITIONS if c.modality.name == mod and c.exposure.name == exp]
            else:
                idxs = [c.index for c in CONDITIONS if c.modality.name == key]
            if not idxs:
                raise ConfigError(f"{name}: unknown condition {key!r}")
            for i in idxs:
                out[i] = float(v)
        if any(v is None for v in out):
            raise ConfigError(f"{name}: mapping must cover all 12 conditions")
        return tuple(out)
    if isinstance(values, (int, float)):
        return (float(values),) * 12
    values = [float(v) for v in values]
    if len(values) == 4:
        return tuple(values[i // 3] for i in range(12))
    if len(values) == 12:
        return tuple(values)
    raise ConfigError(f"{name}: expected 1, 4 or 12 values, got {len(values)}")


def _check_unit(values: Sequence[float], name: str) -> None:
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise ConfigError(f"{name}: probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class DefectProfile:
    kind: str
    # probability of being visible under each condition, by condition index
    visibility: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "visibility", _per_condition(self.visibility, f"profile {self.kind}"))
        _check_unit(self.visibility, f"profile {self.kind}")

    @property
    def models_invisible(self) -> bool:
        return max(self.visibility) == 0.0


DEFAULT_PROFILES = (
    # per-modality visibility (C, UD, LR, UDLR); illustrative, not measured
    DefectProfile("scratch", (0.35, 0.80, 0.80, 0.90)),
    DefectProfile("dot", (0.70, 0.55, 0.55, 0.70)),
    DefectProfile("missing-decoration", (0.90, 0.40, 0.40, 0.60)),
    DefectProfile("break", (0.50, 0.75, 0.70, 0.90)),
)

# Annotator preference over conditions (C/low ... UDLR/high).  An
# approximate shape prior favoring dark-field and medium exposure; the
# measured histogram is not available in machine-readable form.
ANNOTATION_PROFILE_APPROX = (
    0.050, 0.070, 0.040,
    0.070, 0.100, 0.060,
    0.070, 0.095, 0.055,
    0.110, 0.170, 0.110,
)


@dataclass(frozen=True)
class SceneConfig:
    region_count: int = 100
    regions_per_object: int = 4
    image_width: int = 416
    image_height: int = 416
    # probability of 0, 1, 2, ... defects in a region
    defect_count_weights: Tuple[float, ...] = (0.0, 0.75, 0.20, 0.05)
    defect_size: Tuple[float, float] = (12.0, 64.0)
    profiles: Tuple[DefectProfile, ...] = DEFAULT_PROFILES
    profile_weights: Tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    invisible_rate: float = 0.008
    exposure_multipliers: Tuple[float, float, float] = (0.8, 1.0, 0.9)
    annotation_profile: Optional[Tuple[float, ...]] = ANNOTATION_PROFILE_APPROX

    def __post_init__(self):
        if self.region_count < 1:
            raise ConfigError("region_count must be >= 1")
        if self.regions_per_object < 1:
            raise ConfigError("regions_per_object must be >= 1")
        lo, hi = self.defect_size
        if not 0 < lo <= hi:
            raise ConfigError(f"defect_size must satisfy 0 < min <= max, got {self.defect_size}")
        if hi > min(self.image_width, self.image_height):
            raise ConfigError(
                f"defect_size max {hi} does not fit a {self.image_width}x{self.image_height} image"
            )
        w = np.asarray(self.defect_count_weights, dtype=float)
        if w.size == 0 or (w < 0).any() or not np.isclose(w.sum(), 1.0):
            raise ConfigError("defect_count_weights must be non-negative and sum to 1")
        if len(self.profiles) != len(self.profile_weights) or not self.profiles:
            raise ConfigError("need one weight per defect profile")
        pw = np.asarray(self.profile_weights, dtype=float)
        if (pw < 0).any() or not np.isclose(pw.sum(), 1.0):
            raise ConfigError("profile_weights must be non-negative and sum to 1")
        if not 0.0 <= self.invisible_rate <= 1.0:
            raise ConfigError("invisible_rate must lie in [0, 1]")
        if len(self.exposure_multipliers) != 3 or any(m < 0 for m in self.exposure_multipliers):
            raise ConfigError("exposure_multipliers needs three non-negative values")
        if self.annotation_profile is not None:
            ap = _per_condition(self.annotation_profile, "annotation_profile")
            if any(v < 0 for v in ap) or sum(ap) <= 0:
                raise ConfigError("annotation_profile must be non-negative with a positive sum")
            object.__setattr__(self, "annotation_profile", ap)

    def visibility_probabilities(self, profile: DefectProfile) -> np.ndarray:
        mult = np.array([self.exposure_multipliers[c.exposure] for c in CONDITIONS])
        return np.clip(np.asarray(profile.visibility) * mult, 0.0, 1.0)


@dataclass(frozen=True)
class DetectorNoiseModel:
    detect_probability: Tuple[float, ...] = (0.9,) * 12
    jitter: float = 2.0
    # Beta(a, b) mapped onto the range below
    tp_confidence: Tuple[float, float] = (6.0, 2.0)
    tp_confidence_range: Tuple[float, float] = (0.0, 1.0)
    fp_rate: float = 0.3
    fp_confidence: Tuple[float, float] = (2.0, 5.0)
    fp_confidence_range: Tuple[float, float] = (0.0, 1.0)
    fp_size: Tuple[float, float] = (12.0, 64.0)

    def __post_init__(self):
        probs = _per_condition(self.detect_probability, "detect_probability")
        _check_unit(probs, "detect_probability")
        object.__setattr__(self, "detect_probability", probs)
        if self.jitter < 0:
            raise ConfigError("jitter must be >= 0")
        if self.fp_rate < 0:
            raise ConfigError("fp_rate must be >= 0")
        for name in ("tp_confidence", "fp_confidence"):
            a, b = getattr(self, name)
            if a <= 0 or b <= 0:
                raise ConfigError(f"{name} Beta parameters must be positive")
        for name in ("tp_confidence_range", "fp_confidence_range"):
            lo, hi = getattr(self, name)
            if not 0.0 <= lo <= hi <= 1.0:
                raise ConfigError(f"{name} must satisfy 0 <= lo <= hi <= 1")
        if not 0 < self.fp_size[0] <= self.fp_size[1]:
            raise ConfigError("fp_size must satisfy 0 < min <= max")

    @classmethod
    def noiseless(cls) -> "DetectorNoiseModel":
        return cls(
            detect_probability=1.0,
            jitter=0.0,
            tp_confidence_range=(0.8, 1.0),
            fp_rate=0.0,
        )


# -- dataset generation -----------------------------------------------------------


def _generate_region(config: SceneConfig, seed: int, k: int) -> RegionStack:
    rng = rng_for(seed, "region", k)
    region_id = f"r{k:06d}"
    object_id = f"obj{k // config.regions_per_object:05d}"
    W, H = config.image_width, config.image_height
    lo, hi = config.defect_size

    n_defects = int(rng.choice(len(config.defect_count_weights), p=config.defect_count_weights))
    hidden = bool(rng.random() < config.invisible_rate)

    annotations: List[Annotation] = []
    visible_by_condition: List[List[str]] = [[] for _ in range(12)]
    any_visible = False
    for j in range(n_defects):
        profile = config.profiles[int(rng.choice(len(config.profiles), p=config.profile_weights))]
        w, h = rng.uniform(lo, hi, size=2)
        x0 = rng.uniform(0.0, W - w)
        y0 = rng.uniform(0.0, H - h)
        box = BoundingBox(float(x0), float(y0), float(x0 + w), float(y0 + h))

        p = config.visibility_probabilities(profile)
        seen = rng.random(12) < p
        if hidden:
            seen[:] = False
        elif not seen.any() and p.max() > 0:
            # every non-hidden defect is visible somewhere
            seen[int(np.argmax(p))] = True
        if not seen.any():
            continue
        any_visible = True

        weights = np.where(seen, 1.0, 0.0)
        if config.annotation_profile is not None:
            weights = weights * np.asarray(config.annotation_profile)
            if weights.sum() <= 0:
                weights = np.where(seen, 1.0, 0.0)
        source = CONDITIONS[int(rng.choice(12, p=weights / weights.sum()))]
        defect_id = f"{region_id}-d{j}"
        annotations.append(Annotation(box, defect_id, source))
        for c in np.flatnonzero(seen):
            visible_by_condition[int(c)].append(defect_id)

    visible = any_visible or n_defects == 0
    images = [
        ImageRecord(
            image_id=image_id_for(region_id, c),
            region_id=region_id,
            condition=c,
            uri=f"synthetic://{region_id}/{c.modality.name}_{c.exposure.name}.png",
            annotations=tuple(annotations),
            visible_defects=tuple(visible_by_condition[c.index]),
        )
        for c in CONDITIONS
    ]
    return RegionStack(region_id, object_id, visible, tuple(images))


def scene_config_to_dict(config: SceneConfig) -> dict:
    d = asdict(config)
    d["profiles"] = [
        {"kind": p.kind, "visibility": list(p.visibility)} for p in config.profiles
    ]
    return _plain(d)


def noise_model_to_dict(noise: DetectorNoiseModel) -> dict:
    return _plain(asdict(noise))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _pool_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def generate_dataset(config: SceneConfig, seed: int, workers: int = 1) -> DatasetManifest:
    regions = _pool_map(lambda k: _generate_region(config, seed, k), range(config.region_count), workers)
    metadata = {
        "generator": "multilight.simulator",
        "seed": seed,
        "image_width": config.image_width,
        "image_height": config.image_height,
        "scene": scene_config_to_dict(config),
    }
    return DatasetManifest(tuple(regions), metadata)


# -- detections ---------------------------------------------------------------------


def _clamp_box(coords: np.ndarray, W: float, H: float) -> Optional[BoundingBox]:
    x0, y0, x1, y1 = (float(v) for v in coords)
    x0, x1 = min(max(x0, 0.0), W), min(max(x1, 0.0), W)
    y0, y1 = min(max(y0, 0.0), H), min(max(y1, 0.0), H)
    if x1 <= x0 or y1 <= y0:
        return None
    return BoundingBox(x0, y0, x1, y1)


def _confidence(rng: np.random.Generator, params, span) -> float:
    lo, hi = span
    return float(lo + (hi - lo) * rng.beta(*params))


def _simulate_image(rec: ImageRecord, noise: DetectorNoiseModel, seed: int, W: float, H: float) -> DetectionSet:
    if rec.visible_defects is None:
        raise ValueError(f"image {rec.image_id} has no visibility ground truth")
    rng = rng_for(seed, "detect", rec.region_id, rec.condition.index)
    p_detect = noise.detect_probability[rec.condition.index]
    visible = set(rec.visible_defects)
    out: List[Detection] = []
    for ann in rec.annotations:
        if ann.defect_id not in visible or rng.random() >= p_detect:
            continue
        coords = np.asarray(ann.box.as_tuple())
        if noise.jitter > 0:
            coords = coords + rng.normal(0.0, noise.jitter, size=4)
        box = _clamp_box(coords, W, H) or ann.box
        out.append(Detection(box, _confidence(rng, noise.tp_confidence, noise.tp_confidence_range)))
    lo, hi = noise.fp_size
    for _ in range(int(rng.poisson(noise.fp_rate))):
        w = min(rng.uniform(lo, hi), W)
        h = min(rng.uniform(lo, hi), H)
        x0 = rng.uniform(0.0, W - w)
        y0 = rng.uniform(0.0, H - h)
        box = BoundingBox(float(x0), float(y0), float(x0 + w), float(y0 + h))
        out.append(Detection(box, _confidence(rng, noise.fp_confidence, noise.fp_confidence_range)))
    return DetectionSet(tuple(out))


def simulate_detections(
    manifest: DatasetManifest, noise: DetectorNoiseModel, seed: int, workers: int = 1
) -> DatasetManifest:
    """Return ``manifest`` with simulated detections on every image."""
    try:
        W = float(manifest.metadata["image_width"])
        H = float(manifest.metadata["image_height"])
    except KeyError:
        raise ValueError("manifest metadata lacks image_width/image_height") from None

    def run(region: RegionStack) -> RegionStack:
        return region.with_images(
            [replace(rec, detections=_simulate_image(rec, noise, seed, W, H)) for rec in region.images]
        )

    return manifest.with_regions(_pool_map(run, manifest.regions, workers))


# -- presets ------------------------------------------------------------------------


def complementary_scene(region_count: int, **overrides) -> SceneConfig:
    """Every defect is visible under exactly one modality (all three exposures)."""
    profiles = tuple(
        DefectProfile(f"only-{m.name}", tuple(1.0 if i == m else 0.0 for i in range(4)))
        for m in Modality
    )
    base = dict(
        region_count=region_count,
        profiles=profiles,
        profile_weights=(0.25, 0.25, 0.25, 0.25),
        exposure_multipliers=(1.0, 1.0, 1.0),
        invisible_rate=0.0,
    )
    base.update(overrides)
    return SceneConfig(**base)


def all_visible_scene(region_count: int, **overrides) -> SceneConfig:
    base = dict(
        region_count=region_count,
        profiles=(DefectProfile("any", 1.0),),
        profile_weights=(1.0,),
        exposure_multipliers=(1.0, 1.0, 1.0),
        invisible_rate=0.0,
    )
    base.update(overrides)
    return SceneConfig(**base)


def clutter_detector(**overrides) -> DetectorNoiseModel:
    """Reliable on visible defects, with background clutter in every image."""
    base = dict(detect_probability=0.9, jitter=1.5, fp_rate=0.5)
    base.update(overrides)
    return DetectorNoiseModel(**base)


# -- config files -------------------------------------------------------------------


def _from_dict(cls, data: Mapping, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for k, v in data.items():
        if k == "profiles":
            v = tuple(DefectProfile(p["kind"], p["visibility"]) for p in v)
        elif isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


@dataclass(frozen=True)
class SimulationConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    detector: DetectorNoiseModel = field(default_factory=DetectorNoiseModel)
    # detector variants keyed by training-set descriptor
    detector_by_train: Mapping[str, DetectorNoiseModel] = field(default_factory=dict)

    def detector_for(self, train: Optional[str]) -> DetectorNoiseModel:
        return self.detector_by_train.get(train, self.detector) if train else self.detector

    def to_dict(self) -> dict:
        d = {"scene": scene_config_to_dict(self.scene), "detector": noise_model_to_dict(self.detector)}
        if self.detector_by_train:
            d["detector_by_train"] = {k: noise_model_to_dict(v) for k, v in self.detector_by_train.items()}
        return d


def simulation_config_from_dict(data: Optional[Mapping]) -> SimulationConfig:
    data = dict(data or {})
    unknown = set(data) - {"scene", "detector", "detector_by_train"}
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(sorted(unknown))}")
    scene = _from_dict(SceneConfig, data.get("scene") or {}, "scene")
    detector_data = data.get("detector") or {}
    detector = _from_dict(DetectorNoiseModel, detector_data, "detector")
    by_train = {
        str(k): _from_dict(DetectorNoiseModel, {**detector_data, **(v or {})}, f"detector_by_train.{k}")
        for k, v in (data.get("detector_by_train") or {}).items()
    }
    return SimulationConfig(scene, detector, by_train)


def load_simulation_config(stream) -> SimulationConfig:
    import yaml

    try:
        data = yaml.safe_load(stream)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    return simulation_config_from_dict(data)


def dump_simulation_config(config: SimulationConfig) -> str:
    import yaml

    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)
