import xml.etree.ElementTree as ET

import numpy as np
import pytest

from hpinf.hyperpower import ConvergenceTrace
from hpinf.plots import render_plot

NS = "{http://www.w3.org/2000/svg}"


def parse(path):
    return ET.parse(path).getroot()


def test_constant_series_horizontal(tmp_path):
    root = parse(render_plot({"flat": [2.0, 2.0, 2.0]}, tmp_path / "p.svg", log_y=False))
    lines = root.findall(f".//{NS}polyline")
    assert len(lines) == 1
    ys = {pt.split(",")[1] for pt in lines[0].get("points").split()}
    assert len(ys) == 1


def test_two_legend_entries(tmp_path):
    root = parse(render_plot({"a": [1, 2, 3], "b": [3, 2, 1]}, tmp_path / "p.svg"))
    entries = root.findall(f".//{NS}g[@class='legend-entry']")
    assert [e.find(f"{NS}text").text for e in entries] == ["a", "b"]


def test_log_axis_for_traces_and_divergence_marked(tmp_path):
    ok = ConvergenceTrace("schulz", [1.0, 1e-3, 1e-9], "m", True, 3)
    bad = ConvergenceTrace("lissa", [1.0, 1e3, 1e9, float("inf")], "m", False, 4, diverged=True)
    path = render_plot({"schulz": ok, "lissa": bad}, tmp_path / "t.svg")
    root = parse(path)
    text = path.read_text()
    assert "1e-9" in text and "1e9" in text
    assert len(root.findall(f".//{NS}path[@class='diverged']")) == 1
    pts = root.findall(f".//{NS}polyline")[1].get("points").split()
    assert len(pts) == 3  # drawn up to the blow-up
    assert "lissa (diverged)" in text


def test_linear_axis_recall(tmp_path):
    path = render_plot({"rt": np.linspace(0.1, 1.0, 10)}, tmp_path / "r.svg", log_y=False,
                       x=list(range(10, 101, 10)))
    assert "1e" not in path.read_text()


def test_escapes_labels(tmp_path):
    root = parse(render_plot({'a<b & "c"': [1.0, 2.0]}, tmp_path / "e.svg", log_y=False))
    assert root.find(f".//{NS}polyline").get("data-label") == 'a<b & "c"'


def test_empty_input(tmp_path):
    with pytest.raises(ValueError):
        render_plot({}, tmp_path / "x.svg")
    with pytest.raises(ValueError):
        render_plot({"a": []}, tmp_path / "x.svg")


def test_x_length_mismatch(tmp_path):
    with pytest.raises(ValueError):
        render_plot({"a": [1.0, 2.0]}, tmp_path / "x.svg", x=[1, 2, 3])
