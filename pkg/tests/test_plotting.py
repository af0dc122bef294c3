import re

import numpy as np
import pytest

from cooplane.metrics import LOOP_HEADER
from cooplane.plotting import CsvFormatError, cmd_plot, read_csv
from cooplane.training import TRAJECTORY_HEADER


def _write(path, header, rows, comments=("seed = 1", "road.dt = 0.1", "road.lane_count = 2")):
    with open(path, "w") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write(header + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")


def _polylines(svg):
    return re.findall(r'<polyline class="trajectory"[^>]*points="([^"]*)"', svg)


def test_empty_trajectory(tmp_path):
    p = tmp_path / "traj.csv"
    _write(p, TRAJECTORY_HEADER, [])
    paths = cmd_plot([str(p)], "time_space", tmp_path / "out")
    assert len(paths) == 2
    svg = open(paths[0]).read()
    assert svg.startswith("<?xml") and svg.rstrip().endswith("</svg>")
    assert 'class="xlabel"' in svg and 'class="ylabel"' in svg
    assert _polylines(svg) == []
    assert "seed = 1" in svg


def test_constant_speed_straight_line(tmp_path):
    rows = [(t, 4, 1, 10.0 + 2.0 * t, 3.5, 20.0, 0.0, 0) for t in range(50)]
    p = tmp_path / "traj.csv"
    _write(p, TRAJECTORY_HEADER, rows)
    paths = cmd_plot([str(p)], "time_space", tmp_path)
    lane1 = open([q for q in paths if q.endswith("lane1.svg")][0]).read()
    (pts,) = _polylines(lane1)
    xy = np.array([[float(v) for v in pair.split(",")] for pair in pts.split()])
    assert len(xy) == 50
    slope = np.diff(xy[:, 1]) / np.diff(xy[:, 0])
    assert np.allclose(slope, 20.0)
    assert _polylines(open([q for q in paths if q.endswith("lane0.svg")][0]).read()) == []


def test_speed_change_splits_but_joins(tmp_path):
    rows = [(t, 0, 0, float(t), 0.0, 3.0 if t < 10 else 22.0, 0.0, 0) for t in range(20)]
    p = tmp_path / "traj.csv"
    _write(p, TRAJECTORY_HEADER, rows)
    svg = open(cmd_plot([str(p)], "time_space", tmp_path)[0]).read()
    a, b = _polylines(svg)
    assert a.split()[-1] == b.split()[0]


def test_flow_density_single_point(tmp_path):
    p = tmp_path / "loops.csv"
    _write(p, LOOP_HEADER, [(200.0, 0, 1800.0, 25.0, 20.0)])
    svg = open(cmd_plot([str(p)], "flow_density", tmp_path)[0]).read()
    pts = re.findall(r'class="point"[^>]*data-k="([^"]*)" data-q="([^"]*)"', svg)
    assert [(float(k), float(q)) for k, q in pts] == [(25.0, 1800.0)]


def test_alpha_surface(tmp_path):
    p = tmp_path / "alpha_star.csv"
    _write(p, "lane_count,t_up,alpha_star", [(2, 1.0, 8.0), (3, 1.0, 4.0), (2, 3.0, 2.0)],
           comments=("seed = 1", "plane = 14.0, -4.0, -3.0"))
    svg = open(cmd_plot([str(p)], "alpha_surface", tmp_path)[0]).read()
    assert svg.count('class="alpha-star"') == 3
    assert 'class="plane"' in svg


def test_malformed_row_reports_line(tmp_path):
    p = tmp_path / "traj.csv"
    _write(p, TRAJECTORY_HEADER, [(0, 1, 0, 1.0, 0.0, 2.0, 0.0, 0), ("x", 1, 0)])
    with pytest.raises(CsvFormatError, match=r"traj.csv:6:"):
        cmd_plot([str(p)], "time_space", tmp_path)
    q = tmp_path / "bad_header.csv"
    _write(q, "a,b", [])
    with pytest.raises(CsvFormatError, match=r":4:"):
        read_csv(q, TRAJECTORY_HEADER)
