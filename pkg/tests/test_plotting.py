import xml.etree.ElementTree as ET

import numpy as np
import pytest

from pcgseg.plotting import line_plot_svg, write_svg


def test_svg_is_well_formed(tmp_path):
    x = np.linspace(0, 2, 50)
    svg = line_plot_svg(x, {"eta": np.sin(x), "reference": np.sign(np.sin(x))}, "a<b & c")
    root = ET.fromstring(svg)
    lines = root.findall("{http://www.w3.org/2000/svg}polyline")
    assert len(lines) == 2
    assert all(len(pl.get("points").split()) == 50 for pl in lines)
    write_svg(tmp_path / "p.svg", svg)
    assert (tmp_path / "p.svg").read_text() == svg


def test_points_stay_inside_canvas():
    x = np.arange(10.0)
    svg = line_plot_svg(x, {"flat": np.ones(10)}, width=300, height=100)
    pts = ET.fromstring(svg).find("{http://www.w3.org/2000/svg}polyline").get("points").split()
    xy = np.array([p.split(",") for p in pts], dtype=float)
    assert np.all((xy[:, 0] >= 0) & (xy[:, 0] <= 300) & (xy[:, 1] >= 0) & (xy[:, 1] <= 100))
    assert np.all(np.diff(xy[:, 0]) > 0)


def test_rejects_mismatched_series():
    with pytest.raises(ValueError):
        line_plot_svg(np.arange(3.0), {"a": np.arange(4.0)})
    with pytest.raises(ValueError):
        line_plot_svg([], {})
