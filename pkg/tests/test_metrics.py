from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CONF_LEVELS, detection_lists, int_boxes, random_boxes, random_detections
from oracles import ap_bruteforce, greedy_match_bruteforce, iou_exact
from multilight.metrics import (
    DEFAULT_PR_GRID,
    MatchCounts,
    average_precision,
    f1_score,
    iou,
    match_detections,
    pr_curve,
    precision_recall_f1,
)
from multilight.model import BoundingBox, Detection

B = BoundingBox


# -- iou ------------------------------------------------------------------


@pytest.mark.parametrize(
    "a, b, expected",
    [
        ((0, 0, 10, 10), (0, 0, 10, 10), 1.0),
        ((0, 0, 10, 10), (20, 20, 30, 30), 0.0),
        ((0, 0, 10, 10), (5, 0, 15, 10), 1 / 3),
        ((0, 0, 10, 10), (10, 0, 20, 10), 0.0),  # touching edges
        ((0, 0, 10, 10), (1, 1, 11, 11), 81 / 119),
    ],
)
def test_iou_examples(a, b, expected):
    assert iou(B(*a), B(*b)) == expected


@given(int_boxes(), int_boxes())
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == iou(b, a)
    assert (v == 1.0) == (a == b)
    assert v == float(iou_exact(a.as_tuple(), b.as_tuple()))


# -- matching ---------------------------------------------------------------


def test_match_exact_overlap():
    r = match_detections([Detection(B(0, 0, 10, 10), 0.9)], [B(0, 0, 10, 10)], 0.5)
    assert r.counts == MatchCounts(1, 0, 0)


def test_match_below_threshold():
    r = match_detections([Detection(B(5, 0, 15, 10), 0.9)], [B(0, 0, 10, 10)], 0.5)
    assert r.counts == MatchCounts(0, 1, 1)


def test_match_one_to_one():
    dets = [Detection(B(0, 0, 10, 10), 0.9), Detection(B(1, 1, 11, 11), 0.8)]
    r = match_detections(dets, [B(0, 0, 10, 10)], 0.5)
    assert r.counts == MatchCounts(1, 1, 0)
    assert r.labels == (True, False)


def test_match_prefers_confident_detection_regardless_of_input_order():
    dets = [Detection(B(1, 1, 11, 11), 0.8), Detection(B(0, 0, 10, 10), 0.9)]
    r = match_detections(dets, [B(0, 0, 10, 10)], 0.5)
    assert r.labels == (False, True)


def test_match_takes_best_unmatched_gt():
    # the detection overlaps both; the second ground truth fits better
    gts = [B(0, 0, 10, 10), B(2, 0, 12, 10)]
    r = match_detections([Detection(B(2, 0, 12, 10), 0.9), Detection(B(0, 0, 10, 10), 0.5)], gts, 0.5)
    assert r.counts == MatchCounts(2, 0, 0)


def test_match_equal_iou_goes_to_lower_index():
    gts = [B(0, 0, 10, 10), B(0, 0, 10, 10)]
    r = match_detections([Detection(B(0, 0, 10, 10), 0.9)], gts, 0.5)
    assert r.counts == MatchCounts(1, 0, 1)


def test_match_empty_inputs():
    assert match_detections([], [], 0.5).counts == MatchCounts(0, 0, 0)
    assert match_detections([], [B(0, 0, 1, 1)], 0.5).counts == MatchCounts(0, 0, 1)


def test_match_min_confidence_filters():
    dets = [Detection(B(0, 0, 10, 10), 0.65)]
    r = match_detections(dets, [B(0, 0, 10, 10)], 0.5, min_confidence=0.7)
    assert r.counts == MatchCounts(0, 0, 1)


@settings(max_examples=300)
@given(detection_lists(), st.lists(int_boxes(), max_size=5), st.sampled_from([0.3, 0.5, 0.7]))
def test_match_invariants_and_oracle(dets, gts, thr):
    r = match_detections(dets, gts, thr)
    c = r.counts
    assert c.tp + c.fn == len(gts)
    assert c.tp + c.fp == len(dets)
    assert c.tp <= len(dets)
    assert list(r.labels) == greedy_match_bruteforce(dets, gts, thr)


# -- P / R / F1 ------------------------------------------------------------------


def test_prf_perfect():
    row = precision_recall_f1(MatchCounts(10, 0, 0))
    assert (row.precision, row.recall, row.f1) == (1.0, 1.0, 1.0)


def test_prf_arithmetic():
    row = precision_recall_f1(MatchCounts(3, 1, 2))
    assert row.precision == 0.75
    assert row.recall == 0.6
    assert row.f1 == pytest.approx(2 / 3, abs=1e-15)


def test_prf_zero_conventions():
    row = precision_recall_f1(MatchCounts(0, 0, 0))
    assert (row.precision, row.recall, row.f1) == (0.0, 0.0, 0.0)


def test_f1_from_paper_row_c():
    assert f1_score(0.6353, 0.4584) == pytest.approx(0.5325, abs=1e-4)


# -- AP -----------------------------------------------------------------------------


def test_ap_single_perfect():
    assert average_precision([(0.9, True)], 1) == 1.0


def test_ap_hand_enumeration():
    scored = [(0.9, True), (0.8, False), (0.7, True)]
    assert average_precision(scored, 2) == pytest.approx(5 / 6, abs=1e-15)


def test_ap_no_detections():
    assert average_precision([], 3) == 0.0


def test_ap_no_ground_truth():
    assert average_precision([(0.9, False)], 0) == 0.0


def test_ap_grid_mode_matches_oracle():
    scored = [(0.95, True), (0.72, False), (0.55, True), (0.31, True), (0.12, False)]
    grid = DEFAULT_PR_GRID
    assert average_precision(scored, 4, grid) == ap_bruteforce(scored, 4, grid)


@settings(max_examples=300)
@given(
    st.lists(st.tuples(st.sampled_from(CONF_LEVELS + (0.05, 0.95, 1.0)), st.booleans()), max_size=20),
    st.integers(0, 25),
)
def test_ap_matches_bruteforce(scored, extra_gt):
    gt = sum(t for _, t in scored) + extra_gt
    ap = average_precision(scored, gt)
    assert 0.0 <= ap <= 1.0
    assert abs(ap - ap_bruteforce(scored, gt)) <= 1e-12


@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=20))
def test_ap_is_one_for_exact_detector(confs):
    assert average_precision([(c, True) for c in confs], len(confs)) == pytest.approx(1.0, abs=1e-12)


# -- PR curve -------------------------------------------------------------------------


def test_pr_curve_perfect():
    pts = pr_curve([(0.95, True)] * 4, 4)
    assert len(pts) == 9
    assert all(p.precision == 1.0 and p.recall == 1.0 for p in pts)


def test_pr_curve_empty():
    pts = pr_curve([], 3)
    assert len(pts) == 9
    assert all(p.precision == 0.0 and p.recall == 0.0 for p in pts)


def test_pr_curve_custom_grid():
    scored = [(0.9, True), (0.8, False), (0.7, True)]
    pts = pr_curve(scored, 2, [0.75, 0.85])
    assert [(p.threshold, p.precision, p.recall) for p in pts] == [(0.75, 0.5, 0.5), (0.85, 1.0, 0.5)]


@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), max_size=30))
def test_recall_non_decreasing_as_threshold_drops(scored):
    gt = max(1, sum(t for _, t in scored))
    pts = pr_curve(scored, gt)
    recalls = [p.recall for p in reversed(pts)]
    assert recalls == sorted(recalls)
