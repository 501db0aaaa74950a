"""Tests for report formatting, SVG rendering and the trial pool."""
import json
import math
import xml.etree.ElementTree as ET
from datetime import datetime, timezone

import numpy as np
import pytest

from tessera.geometry import MetricKind, Rect
from tessera.process import ColouredProcess, PlanarWindow, SeedArray
from tessera.services.experiments import summarize_cross
from tessera.services.reporting import ReportWriter, default_path, read_csv_rows, strip_header, to_plain
from tessera.services.svg import svg_document, visible_cells
from tessera.services.trials import run_trials
from tessera.tessellation import Tessellation

from .conftest import tessellation_of

SVG = "{http://www.w3.org/2000/svg}"


def square_trial(trial_index, *, offset):
    return trial_index * trial_index + offset


@pytest.fixture
def writer():
    return ReportWriter(clock=lambda: datetime(2024, 6, 1, 12, 0, tzinfo=timezone.utc))


@pytest.fixture
def window():
    return PlanarWindow(Rect(0.0, 4.0, 0.0, 4.0), padding=2.0, height_cap=2.0, safe_radius=1.0)


class TestToPlain:
    def test_numpy_values(self):
        value = {"a": np.int64(3), "b": np.array([1.5, 2.5]), "c": np.bool_(True), 4: (np.float32(0.5),)}
        assert to_plain(value) == {"a": 3, "b": [1.5, 2.5], "c": True, "4": [0.5]}

    def test_non_finite_is_null(self):
        assert to_plain([math.nan, math.inf, 1.0]) == [None, None, 1.0]


class TestReportWriter:
    def test_csv_cells(self, writer):
        body = writer.csv_body(["p", "Hb", "n"], [{"p": 0.1, "Hb": True, "n": np.int64(4), "extra": 1}])
        assert body == "p,Hb,n\n0.1,1,4\n"

    def test_csv_header(self, writer):
        text = writer.csv_text({"s": 6.0}, ["k"], [{"k": 3}])
        assert text.startswith("# generated_at: 2024-06-01T12:00:00+00:00\n# config: {\"s\": 6.0}\n")
        assert read_csv_rows(text) == [{"k": "3"}]

    def test_json_document(self, writer):
        doc = json.loads(writer.json_text({"s": 4.0}, {"runs": [{"x": np.float64(0.25)}]}))
        assert doc == {"generated_at": "2024-06-01T12:00:00+00:00", "config": {"s": 4.0}, "body": {"runs": [{"x": 0.25}]}}

    def test_strip_header(self, writer):
        other = ReportWriter(clock=lambda: datetime(2030, 1, 1, tzinfo=timezone.utc))
        assert strip_header(writer.csv_text({}, ["k"], [])) == strip_header(other.csv_text({}, ["k"], []))
        assert strip_header(writer.json_text({}, [1])) == strip_header(other.json_text({}, [1]))

    def test_write_creates_parents(self, writer, tmp_path):
        path = writer.write(tmp_path / "a" / "b.csv", "x\n")
        assert path.read_text() == "x\n"

    def test_default_path(self):
        assert default_path("results", "tail", "csv") == "results/tail.csv"
        assert default_path("results", "tail", "csv", "mine.csv") == "mine.csv"


class TestSummaries:
    def test_cross_summary(self):
        rows = [
            {"trial_index": 0, "p": 0.2, "Hb": True, "Vw": False, "certified": True},
            {"trial_index": 0, "p": 0.8, "Hb": False, "Vw": True, "certified": True},
            {"trial_index": 1, "p": 0.2, "Hb": False, "Vw": False, "certified": True},
            {"trial_index": 1, "p": 0.8, "Hb": True, "Vw": False, "certified": False},
        ]
        summary = summarize_cross(rows)
        assert summary["monotonicity_violations"] == 1
        assert summary["estimates"]["0.2"]["xor_failures"] == 1
        assert summary["estimates"]["0.8"]["uncertified"] == 1
        assert summary["estimates"]["0.8"]["estimate"] == 0.5


class TestSvg:
    """Test the SVG canvas."""

    def test_empty_process(self, window):
        T = Tessellation(ColouredProcess(SeedArray.empty(), 0.5), MetricKind.JOHNSON_MEHL, window)
        root = ET.fromstring(svg_document(T, window.target))
        assert root.find(f".//{SVG}path") is None
        assert root.find(f"./{SVG}g/{SVG}rect") is not None

    def test_single_seed(self, window):
        T = tessellation_of([(2.0, 2.0, 0.5)], p=0.5, domain=window)
        root = ET.fromstring(svg_document(T, window.target, rays=64))
        paths = root.findall(f".//{SVG}path")
        assert len(paths) == 1
        assert paths[0].get("fill") == "black" and paths[0].get("data-seed") == "0"
        assert len(root.findall(f".//{SVG}circle")) == 1

    def test_visible_cells(self, window):
        T = tessellation_of([(1.0, 2.0, 0.0), (3.0, 2.0, 0.0), (5.9, -1.9, 1.5)], domain=window)
        assert visible_cells(T, window.target, divisions=32).tolist() == [0, 1]

    def test_aspect(self, window):
        T = tessellation_of([(2.0, 2.0, 0.5)], domain=window)
        root = ET.fromstring(svg_document(T, Rect(0.0, 4.0, 0.0, 2.0), rays=32, width_px=400))
        assert root.get("height") == "200"
        assert root.get("viewBox") == "0.0 0.0 4.0 2.0"


class TestTrialPool:
    def test_in_process(self):
        assert run_trials(square_trial, range(4), offset=1) == [1, 2, 5, 10]

    def test_workers_keep_order(self):
        assert run_trials(square_trial, range(6), workers=2, offset=0) == [0, 1, 4, 9, 16, 25]
