"""Acceptance suite.

One test per criterion; the terminal summary prints a PASS/FAIL line for each.
"""

import csv
import itertools
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import CONF_LEVELS
from oracles import ap_bruteforce, iou_exact, iou_float, nms_literal
from test_cli import _all_commands, run
from multilight.dataset import (
    DatasetManifest,
    SelectionSpec,
    dumps_manifest,
    loads_manifest,
    select_images,
    split_objectwise,
)
from multilight.fusion import FusionParams, nms
from multilight.metrics import average_precision, f1_score, iou, pr_curve
from multilight.model import CONDITIONS, BoundingBox, Detection, ImageRecord, Modality, RegionStack, image_id_for
from multilight.report import report_curves, write_scored
from multilight.simulator import (
    DetectorNoiseModel,
    SceneConfig,
    SimulationConfig,
    all_visible_scene,
    clutter_detector,
    complementary_scene,
    dump_simulation_config,
    generate_dataset,
    simulate_detections,
)
from multilight.study import SimulatedSource, StudyConfig, run_study

B = BoundingBox
THETAS = (0.3, 0.5, 0.7)


def random_set(rng, max_size=8, extent=12):
    """Small integer grid and a coarse confidence set, so ties and overlaps are common."""
    out = []
    for _ in range(int(rng.integers(0, max_size + 1))):
        x0, x1 = sorted(rng.choice(extent + 1, size=2, replace=False))
        y0, y1 = sorted(rng.choice(extent + 1, size=2, replace=False))
        out.append(Detection(B(int(x0), int(y0), int(x1), int(y1)), float(rng.choice(CONF_LEVELS[::2]))))
    return out


def complementary_config():
    return SimulationConfig(scene=complementary_scene(2000), detector=clutter_detector())


@pytest.mark.criterion(1, "F1 recomputed from precision/recall fixtures within 0.01 pp, < 1 s")
def test_criterion_01_f1_fixtures():
    start = time.perf_counter()
    fixtures = {"C": (63.53, 45.84, 53.25), "UD": (61.69, 44.95, 52.01), "LR": (58.56, 41.07, 48.28)}
    for name, (p, r, expected) in fixtures.items():
        got = 100 * f1_score(p / 100, r / 100)
        assert abs(got - expected) <= 0.01, (name, got)
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion(2, "NMS equals the literal greedy reference on 10,000 random sets, < 10 s")
def test_criterion_02_nms_oracle():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    for k in range(10_000):
        dets = random_set(rng)
        theta = THETAS[k % 3]
        got = [(d.box, d.confidence) for d in nms(dets, FusionParams(theta))]
        assert got == nms_literal([d.box for d in dets], [d.confidence for d in dets], theta), (k, dets, theta)
    assert time.perf_counter() - start < 10.0


@pytest.mark.criterion(3, "NMS post-conditions on >= 10,000 random cases")
def test_criterion_03_nms_postconditions():
    rng = np.random.default_rng(3)
    cases = 0
    for _ in range(4_000):
        dets = random_set(rng)
        for theta in THETAS:
            params = FusionParams(theta)
            kept = nms(dets, params)
            assert all(any(k is d for d in dets) for k in kept)
            for a, b in itertools.combinations(kept, 2):
                assert iou_float(a.box, b.box) < theta
            assert nms(kept, params) == kept
            cases += 1
    assert cases >= 10_000


@pytest.mark.criterion(4, "AP equals brute-force enumeration on 1,000 lists within 1e-12; perfect = 1; no TP = 0")
def test_criterion_04_ap_oracle():
    rng = np.random.default_rng(4)
    for _ in range(1_000):
        n = int(rng.integers(0, 21))
        confs = rng.choice(np.round(np.linspace(0.05, 1.0, 20), 2), size=n)
        tps = rng.random(n) < 0.5
        scored = [(float(c), bool(t)) for c, t in zip(confs, tps)]
        gt = int(tps.sum()) + int(rng.integers(0, 4))
        assert abs(average_precision(scored, gt) - ap_bruteforce(scored, gt)) <= 1e-12
    for n in (1, 5, 20):
        confs = rng.random(n)
        assert average_precision([(float(c), True) for c in confs], n) == 1.0
        assert average_precision([(float(c), False) for c in confs], n) == 0.0
        assert average_precision([(float(c), False) for c in confs], 0) == 0.0


IOU_FIXTURES = [
    ((0, 0, 10, 10), (0, 0, 10, 10), Fraction(1)),
    ((0, 0, 10, 10), (5, 0, 15, 10), Fraction(1, 3)),
    ((0, 0, 10, 10), (1, 1, 11, 11), Fraction(81, 119)),
    ((0, 0, 10, 10), (10, 0, 20, 10), Fraction(0)),
    ((0, 0, 10, 10), (20, 20, 30, 30), Fraction(0)),
    ((0, 0, 10, 20), (0, 0, 10, 10), Fraction(1, 2)),
    ((0, 0, 4, 4), (2, 2, 6, 6), Fraction(1, 7)),
    ((0, 0, 2, 2), (1, 1, 3, 3), Fraction(1, 7)),
    ((0, 0, 10, 10), (2, 2, 8, 8), Fraction(9, 25)),
    ((0, 0, 3, 1), (1, 0, 4, 1), Fraction(1, 2)),
    ((0, 0, 5, 5), (0, 0, 5, 1), Fraction(1, 5)),
    ((0, 0, 6, 4), (3, 2, 9, 6), Fraction(1, 7)),
    ((0, 0, 10, 10), (5, 5, 15, 15), Fraction(1, 7)),
    ((0, 0, 2, 3), (1, 0, 3, 3), Fraction(1, 3)),
    ((0, 0, 4, 4), (1, 0, 5, 4), Fraction(3, 5)),
    ((0, 0, 8, 8), (0, 4, 8, 12), Fraction(1, 3)),
    ((0, 0, 10, 1), (0, 0, 1, 10), Fraction(1, 19)),
    ((0, 0, 7, 3), (2, 1, 5, 2), Fraction(1, 7)),
    ((0, 0, 1, 1), (0, 0, 2, 2), Fraction(1, 4)),
    ((0, 0, 3, 3), (1, 1, 4, 4), Fraction(2, 7)),
    ((0, 0, 0.5, 0.5), (0.25, 0, 0.75, 0.5), Fraction(1, 3)),
]


@pytest.mark.criterion(5, "IoU symmetry, range, identity, disjointness and exact rational fixtures")
def test_criterion_05_iou():
    assert len(IOU_FIXTURES) >= 20
    for a, b, expected in IOU_FIXTURES:
        assert iou_exact(a, b) == expected
        assert iou(B(*a), B(*b)) == float(expected)
        assert iou(B(*b), B(*a)) == float(expected)
    rng = np.random.default_rng(5)
    for _ in range(5_000):
        x = rng.integers(0, 30, size=8)
        a = B(min(x[0], x[1]), min(x[2], x[3]), max(x[0], x[1]) + 1, max(x[2], x[3]) + 1)
        b = B(min(x[4], x[5]), min(x[6], x[7]), max(x[4], x[5]) + 1, max(x[6], x[7]) + 1)
        v = iou(a, b)
        assert 0.0 <= v <= 1.0
        assert v == iou(b, a)
        assert iou(a, a) == 1.0
        assert v == float(iou_exact(a.as_tuple(), b.as_tuple()))
        if a.x_max <= b.x_min or b.x_max <= a.x_min or a.y_max <= b.y_min or b.y_max <= a.y_min:
            assert v == 0.0


def _bare_manifest(region_counts):
    regions = []
    for o, n in enumerate(region_counts):
        for k in range(n):
            rid = f"o{o}-r{k}"
            images = [ImageRecord(image_id_for(rid, c), rid, c, f"file://{rid}/{c.index}") for c in CONDITIONS]
            regions.append(RegionStack(rid, f"o{o}", True, images))
    return DatasetManifest(tuple(regions), {})


@pytest.mark.criterion(6, "object-wise split over 100 seeds, 25% selections, floor(N/4) regions, byte-identical manifests")
def test_criterion_06_dataset_protocol():
    rng = np.random.default_rng(6)
    manifest = _bare_manifest(rng.integers(1, 6, size=40))
    owner = {r.region_id: r.object_id for r in manifest.regions}
    for seed in range(100):
        split = split_objectwise(manifest, seed=seed)
        home = {}
        for part in ("train", "val", "test"):
            full = select_images(manifest, SelectionSpec("full"), split, part)
            for rec in full:
                assert home.setdefault(owner[rec.region_id], part) == part
            specs = [SelectionSpec("single_modality", modality=m) for m in Modality]
            specs += [SelectionSpec("random_modalities", seed=seed, per_region_exposure=p) for p in (False, True)]
            for spec in specs:
                assert 4 * len(select_images(manifest, spec, split, part)) == len(full)
        assert set(home) == set(manifest.objects)

    for n in (4, 5, 7, 101, 5071):
        m = _bare_manifest([1] * n)
        picked = select_images(m, SelectionSpec("quarter_regions", seed=n))
        assert len({r.region_id for r in picked}) == n // 4

    generated = generate_dataset(SceneConfig(region_count=60), seed=6)
    with_dets = simulate_detections(generated, DetectorNoiseModel(), seed=6)
    for m in (manifest, generated, with_dets):
        text = dumps_manifest(m)
        back = loads_manifest(text)
        assert back == m
        assert dumps_manifest(back) == text


@pytest.mark.criterion(7, "late fusion lifts recall by >= 10 and AP by >= 5 points over 5 seeds, < 60 s at 2,000 regions")
def test_criterion_07_fusion_mechanism(capsys):
    start = time.perf_counter()
    config = complementary_config()
    lines = []
    for seed in range(5):
        m = generate_dataset(config.scene, seed=seed)
        split = split_objectwise(m, seed=seed)
        unfused, fused = run_study(m, SimulatedSource(config), StudyConfig(4, seed=seed), split).rows
        lines.append(
            f"seed {seed}: recall {100 * unfused.metrics.recall:.2f} -> {100 * fused.metrics.recall:.2f}, "
            f"AP {100 * unfused.metrics.ap:.2f} -> {100 * fused.metrics.ap:.2f}"
        )
        assert fused.metrics.recall >= unfused.metrics.recall + 0.10, lines[-1]
        assert fused.metrics.ap >= unfused.metrics.ap + 0.05, lines[-1]
    elapsed = time.perf_counter() - start
    with capsys.disabled():
        print("\n" + "\n".join(lines) + f"\nelapsed {elapsed:.1f} s")
    assert elapsed < 60.0


@pytest.mark.criterion(8, "noiseless all-visible Study 1 gives P = R = F1 = AP = 1 for every modality")
def test_criterion_08_noiseless_study1():
    m = generate_dataset(all_visible_scene(300), seed=8)
    source = SimulatedSource(SimulationConfig(detector=DetectorNoiseModel.noiseless()))
    report = run_study(m, source, StudyConfig(1, seed=8), split_objectwise(m, seed=8))
    assert [r.test for r in report.rows] == ["C", "UD", "LR", "UDLR"]
    for row in report.rows:
        assert row.counts.tp > 0
        assert (row.metrics.precision, row.metrics.recall, row.metrics.f1, row.metrics.ap) == (1.0, 1.0, 1.0, 1.0)


@pytest.mark.criterion(9, "plot emits 9 grid points per curve equal to pr_curve; fused curve dominates at low thresholds")
def test_criterion_09_pr_curve(tmp_path):
    config = complementary_config()
    m = generate_dataset(config.scene, seed=9)
    report = run_study(m, SimulatedSource(config), StudyConfig(4, seed=9), split_objectwise(m, seed=9))
    curves = report_curves(report)
    with open(tmp_path / "scored.jsonl", "w") as fh:
        write_scored(curves, fh)
    assert run("plot", "--scored", tmp_path / "scored.jsonl", "--out-csv", tmp_path / "pr.csv") == 0
    with open(tmp_path / "pr.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 9 * len(curves)
    points = {}
    for k, (label, scored, gt) in enumerate(curves):
        expected = pr_curve(scored, gt)
        got = rows[9 * k: 9 * (k + 1)]
        assert len(expected) == 9
        for row, p in zip(got, expected):
            assert row["curve"] == label
            assert float(row["threshold"]) == p.threshold
            assert abs(float(row["precision"]) - p.precision) <= 1e-12
            assert abs(float(row["recall"]) - p.recall) <= 1e-12
        points[label] = expected

    unfused, fused = points["All Train"], points["All Train + Late-fusion"]
    for u, f in zip(unfused, fused):
        if u.threshold <= 0.5:
            assert f.recall > u.recall
            # some operating point of the fused curve is at least as good on both axes
            assert any(g.precision >= u.precision and g.recall >= u.recall for g in fused)


@pytest.mark.criterion(10, "every CLI command is byte-identical on re-run and independent of --threads")
def test_criterion_10_cli_determinism(tmp_path):
    cfg = SimulationConfig(scene=complementary_scene(60, regions_per_object=2), detector=clutter_detector())
    (tmp_path / "sim.yaml").write_text(dump_simulation_config(cfg))
    assert run("generate", "--config", tmp_path / "sim.yaml", "--seed", 10, "--out", tmp_path / "m.jsonl") == 0
    assert run("split", "--manifest", tmp_path / "m.jsonl", "--seed", 10, "--out", tmp_path / "split.jsonl") == 0
    assert run("simulate-detections", "--manifest", tmp_path / "m.jsonl", "--config", tmp_path / "sim.yaml",
               "--seed", 10, "--out", tmp_path / "dets.csv") == 0
    outputs = [_all_commands(tmp_path, tmp_path / name, threads) for name, threads in (("a", 1), ("b", 1), ("c", 3))]
    assert len(outputs[0]) >= 15
    assert outputs[0] == outputs[1] == outputs[2]
