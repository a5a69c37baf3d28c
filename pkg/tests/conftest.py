import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from multilight.model import BoundingBox, Detection, DetectionSet  # noqa: E402

CONF_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@st.composite
def int_boxes(draw, extent=20):
    x0 = draw(st.integers(0, extent - 1))
    y0 = draw(st.integers(0, extent - 1))
    x1 = draw(st.integers(x0 + 1, extent))
    y1 = draw(st.integers(y0 + 1, extent))
    return BoundingBox(x0, y0, x1, y1)


@st.composite
def detection_lists(draw, max_size=8):
    n = draw(st.integers(0, max_size))
    return [
        Detection(draw(int_boxes()), draw(st.sampled_from(CONF_LEVELS)))
        for _ in range(n)
    ]


def random_boxes(rng: np.random.Generator, n: int, extent: int = 20):
    out = []
    for _ in range(n):
        x0, x1 = sorted(rng.choice(extent + 1, size=2, replace=False))
        y0, y1 = sorted(rng.choice(extent + 1, size=2, replace=False))
        out.append(BoundingBox(int(x0), int(y0), int(x1), int(y1)))
    return out


def random_detections(rng: np.random.Generator, n: int, extent: int = 20):
    confs = rng.choice(CONF_LEVELS, size=n)
    return [Detection(b, float(c)) for b, c in zip(random_boxes(rng, n, extent), confs)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# -- acceptance summary --------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, text = marker.args
    ok = _CRITERIA.get(number, (True, text))[0] and report.passed
    _CRITERIA[number] = (ok, text)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, text = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}")
