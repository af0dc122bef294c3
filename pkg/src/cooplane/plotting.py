"""Self-contained SVG figures: time-space diagrams, flow-density scatter, alpha* surface."""

from __future__ import annotations

import math
import os
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .training import TRAJECTORY_HEADER
from .metrics import LOOP_HEADER

WIDTH, HEIGHT = 720, 480
MARGIN = dict(left=70, right=150, top=40, bottom=60)
SPEED_BINS = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, math.inf)
SPEED_COLORS = ("#b2182b", "#ef8a62", "#fddbc7", "#d1e5f0", "#67a9cf", "#2166ac")
SERIES_COLORS = ("#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02")


class CsvFormatError(ValueError):
    pass


def read_csv(path: str, header: str):
    """Rows of floats under the expected ``header``; ``#`` lines are provenance comments."""
    expected = header.split(",")
    comments, rows = [], []
    seen_header = False
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            if not seen_header:
                if line.split(",") != expected:
                    raise CsvFormatError(f"{path}:{lineno}: expected header {header!r}")
                seen_header = True
                continue
            cells = line.split(",")
            if len(cells) != len(expected):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(expected)} fields, "
                                     f"got {len(cells)}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                raise CsvFormatError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
    if not seen_header:
        raise CsvFormatError(f"{path}:1: missing header {header!r}")
    return comments, np.asarray(rows, dtype=float).reshape(-1, len(expected))


def _comment_value(comments: Sequence[str], key: str, default: float) -> float:
    for c in comments:
        if c.startswith(key) and "=" in c:
            try:
                return float(c.split("=", 1)[1])
            except ValueError:
                pass
    return default


def _nice_ticks(lo: float, hi: float, n: int = 6) -> list:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


class Canvas:
    """2-D axes mapping data coordinates onto the plot area."""

    def __init__(self, xlim, ylim, title: str, xlabel: str, ylabel: str, provenance=(),
                 ticks: bool = True):
        self.x0, self.x1 = xlim if xlim[1] > xlim[0] else (xlim[0], xlim[0] + 1.0)
        self.y0, self.y1 = ylim if ylim[1] > ylim[0] else (ylim[0], ylim[0] + 1.0)
        self.left = MARGIN["left"]
        self.right = WIDTH - MARGIN["right"]
        self.top = MARGIN["top"]
        self.bottom = HEIGHT - MARGIN["bottom"]
        self.parts: list = []
        self.legend: list = []
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel
        self.provenance = list(provenance)
        self.ticks = ticks

    @property
    def sx(self) -> float:
        return (self.right - self.left) / (self.x1 - self.x0)

    @property
    def sy(self) -> float:
        return (self.bottom - self.top) / (self.y1 - self.y0)

    def px(self, x, y):
        return self.left + (x - self.x0) * self.sx, self.bottom - (y - self.y0) * self.sy

    def data_group_open(self) -> str:
        """Group whose children are drawn in data coordinates."""
        tx = self.left - self.x0 * self.sx
        ty = self.bottom + self.y0 * self.sy
        return (f'<g class="data" transform="matrix({self.sx!r} 0 0 {-self.sy!r} {tx!r} {ty!r})">')

    def axes(self) -> str:
        cx = (self.left + self.right) / 2
        title = f'<text x="{cx}" y="24" font-size="15" text-anchor="middle">{escape(self.title)}</text>'
        if not self.ticks:
            return title
        out = [f'<rect x="{self.left}" y="{self.top}" width="{self.right - self.left}" '
               f'height="{self.bottom - self.top}" fill="none" stroke="#000"/>']
        for t in _nice_ticks(self.x0, self.x1):
            x, _ = self.px(t, self.y0)
            out.append(f'<line x1="{x:.2f}" y1="{self.bottom}" x2="{x:.2f}" y2="{self.bottom + 5}" stroke="#000"/>')
            out.append(f'<text x="{x:.2f}" y="{self.bottom + 18}" font-size="11" text-anchor="middle">{t:g}</text>')
        for t in _nice_ticks(self.y0, self.y1):
            _, y = self.px(self.x0, t)
            out.append(f'<line x1="{self.left - 5}" y1="{y:.2f}" x2="{self.left}" y2="{y:.2f}" stroke="#000"/>')
            out.append(f'<text x="{self.left - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{t:g}</text>')
        cy = (self.top + self.bottom) / 2
        out.append(f'<text class="xlabel" x="{cx}" y="{HEIGHT - 15}" font-size="13" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text class="ylabel" x="18" y="{cy}" font-size="13" text-anchor="middle" '
                   f'transform="rotate(-90 18 {cy})">{escape(self.ylabel)}</text>')
        out.append(title)
        return "\n".join(out)

    def legend_svg(self) -> str:
        out = ['<g class="legend">']
        x = self.right + 15
        for k, (label, color, kind) in enumerate(self.legend):
            y = self.top + 10 + 20 * k
            if kind == "line":
                out.append(f'<line x1="{x}" y1="{y}" x2="{x + 20}" y2="{y}" stroke="{color}" stroke-width="3"/>')
            else:
                out.append(f'<circle cx="{x + 10}" cy="{y}" r="4" fill="{color}"/>')
            out.append(f'<text x="{x + 26}" y="{y + 4}" font-size="11">{escape(label)}</text>')
        out.append("</g>")
        return "\n".join(out)

    def render(self) -> str:
        prov = "\n".join(escape(p).replace("--", "- -") for p in self.provenance)
        return "\n".join([
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f"<!--\n{prov}\n-->" if prov else "",
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="#fff"/>',
            self.axes(),
            *self.parts,
            self.legend_svg(),
            "</svg>",
            "",
        ])


def _speed_bin(v: np.ndarray) -> np.ndarray:
    return np.searchsorted(SPEED_BINS, v, side="right") - 1


def time_space_svg(rows: np.ndarray, lane: int, dt: float, provenance=()) -> str:
    """Position-vs-time polylines for one lane, split wherever the speed colour changes."""
    sel = rows[rows[:, 2] == lane] if len(rows) else rows
    t = sel[:, 0] * dt if len(sel) else np.zeros(0)
    x = sel[:, 3] if len(sel) else np.zeros(0)
    tlim = (float(t.min()), float(t.max())) if len(t) else (0.0, 1.0)
    xlim = (float(x.min()), float(x.max())) if len(x) else (0.0, 1.0)
    cv = Canvas(tlim, xlim, f"Trajectories, lane {lane}", "time (s)", "position (m)", provenance)
    cv.parts.append(cv.data_group_open())
    if len(sel):
        order = np.lexsort((sel[:, 0], sel[:, 1]))
        sel, t, x = sel[order], t[order], x[order]
        bins = _speed_bin(sel[:, 5])
        gap = _step_gap(sel)
        breaks = np.flatnonzero((np.diff(sel[:, 1]) != 0) | (np.diff(sel[:, 0]) != gap)) + 1
        for run in np.split(np.arange(len(sel)), breaks):
            start = 0
            for c in list(np.flatnonzero(np.diff(bins[run])) + 1) + [len(run)]:
                # each piece borrows the next piece's first point so the curve stays joined
                piece = run[start:min(c + 1, len(run))]
                if len(piece) >= 2:
                    pts = " ".join(f"{a!r},{b!r}" for a, b in zip(t[piece].tolist(), x[piece].tolist()))
                    cv.parts.append(
                        f'<polyline class="trajectory" data-vehicle="{int(sel[piece[0], 1])}" '
                        f'points="{pts}" fill="none" stroke="{SPEED_COLORS[bins[piece[0]]]}" '
                        f'stroke-width="1.2" vector-effect="non-scaling-stroke"/>')
                start = c
    cv.parts.append("</g>")
    for k in range(len(SPEED_COLORS)):
        hi = SPEED_BINS[k + 1]
        label = f"{SPEED_BINS[k]:g}-{hi:g} m/s" if math.isfinite(hi) else f">= {SPEED_BINS[k]:g} m/s"
        cv.legend.append((label, SPEED_COLORS[k], "line"))
    return cv.render()


def _step_gap(sel: np.ndarray) -> float:
    steps = np.unique(sel[:, 0])
    return float(np.min(np.diff(steps))) if len(steps) > 1 else 1.0


def flow_density_svg(series: dict, provenance=()) -> str:
    """Scatter of (density, flow) per labelled strategy."""
    ks = [r[:, 3] for r in series.values() if len(r)]
    qs = [r[:, 2] for r in series.values() if len(r)]
    kmax = max((float(k.max()) for k in ks), default=1.0)
    qmax = max((float(q.max()) for q in qs), default=1.0)
    cv = Canvas((0.0, max(kmax * 1.05, 1.0)), (0.0, max(qmax * 1.05, 1.0)),
                "Flow-density", "density (veh/km)", "flow (veh/h)", provenance)
    for n, (label, rows) in enumerate(series.items()):
        color = SERIES_COLORS[n % len(SERIES_COLORS)]
        cv.legend.append((label, color, "point"))
        for rec in rows:
            cx, cy = cv.px(rec[3], rec[2])
            cv.parts.append(f'<circle class="point" data-series="{escape(label)}" data-k="{float(rec[3])!r}" '
                            f'data-q="{float(rec[2])!r}" cx="{cx:.2f}" cy="{cy:.2f}" r="2.5" '
                            f'fill="{color}" fill-opacity="0.6"/>')
    return cv.render()


def alpha_surface_svg(points: np.ndarray, plane: Optional[Sequence[float]], provenance=()) -> str:
    """Oblique 3-D view of alpha* over (lanes, T_up) with the fitted plane as a wireframe."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    lanes = pts[:, 0] if len(pts) else np.array([2.0, 3.0])
    tups = pts[:, 1] if len(pts) else np.array([1.0, 2.0])
    lo_n, hi_n = float(lanes.min()), float(lanes.max())
    lo_t, hi_t = float(tups.min()), float(tups.max())
    if hi_n == lo_n:
        hi_n = lo_n + 1
    if hi_t == lo_t:
        hi_t = lo_t + 1
    grid_n = np.linspace(lo_n, hi_n, 5)
    grid_t = np.linspace(lo_t, hi_t, 5)
    zs = list(pts[:, 2]) if len(pts) else [0.0]
    if plane is not None:
        b0, b1, b2 = plane
        zs += [b0 + b1 * n + b2 * t for n in (lo_n, hi_n) for t in (lo_t, hi_t)]
    lo_z, hi_z = min(zs + [0.0]), max(zs + [1.0])

    def project(n, t, z):
        u = (n - lo_n) / (hi_n - lo_n)
        w = (t - lo_t) / (hi_t - lo_t)
        h = (z - lo_z) / (hi_z - lo_z)
        return (u + 0.45 * w, h + 0.35 * w)

    cv = Canvas((0.0, 1.45), (0.0, 1.35), "Optimal alpha by lanes and departure interval",
                "lanes (right), T_up in s (depth)", "alpha*", provenance, ticks=False)
    # custom axes: three edges of the bounding box
    for a, b, label in (((lo_n, lo_t, lo_z), (hi_n, lo_t, lo_z), f"lanes {lo_n:g}-{hi_n:g}"),
                        ((lo_n, lo_t, lo_z), (lo_n, hi_t, lo_z), f"T_up {lo_t:g}-{hi_t:g} s"),
                        ((lo_n, lo_t, lo_z), (lo_n, lo_t, hi_z), f"alpha* {lo_z:g}-{hi_z:g}")):
        x1, y1 = cv.px(*project(*a))
        x2, y2 = cv.px(*project(*b))
        cv.parts.append(f'<line class="axis3d" x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" '
                        f'y2="{y2:.2f}" stroke="#000"/>')
        cv.parts.append(f'<text x="{x2 + 4:.2f}" y="{y2 - 4:.2f}" font-size="11">{escape(label)}</text>')
    if plane is not None:
        b0, b1, b2 = plane
        for n in grid_n:
            seg = [cv.px(*project(n, t, b0 + b1 * n + b2 * t)) for t in grid_t]
            cv.parts.append('<polyline class="plane" points="' +
                            " ".join(f"{x:.2f},{y:.2f}" for x, y in seg) +
                            '" fill="none" stroke="#999"/>')
        for t in grid_t:
            seg = [cv.px(*project(n, t, b0 + b1 * n + b2 * t)) for n in grid_n]
            cv.parts.append('<polyline class="plane" points="' +
                            " ".join(f"{x:.2f},{y:.2f}" for x, y in seg) +
                            '" fill="none" stroke="#999"/>')
        cv.legend.append(("fitted plane", "#999", "line"))
    for n, t, z in pts:
        x, y = cv.px(*project(n, t, z))
        cv.parts.append(f'<circle class="alpha-star" data-lanes="{n:g}" data-t-up="{float(t)!r}" '
                        f'data-alpha="{float(z)!r}" cx="{x:.2f}" cy="{y:.2f}" r="4" fill="#d62728"/>')
    cv.legend.append(("alpha*", "#d62728", "point"))
    return cv.render()


def cmd_plot(inputs: Sequence[str], kind: str, out_dir: str) -> list:
    """Render ``kind`` from CSV ``inputs``; returns the written SVG paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if kind == "time_space":
        for path in inputs:
            comments, rows = read_csv(path, TRAJECTORY_HEADER)
            dt = _comment_value(comments, "road.dt", 0.1)
            n_lanes = int(_comment_value(comments, "road.lane_count",
                                         (rows[:, 2].max() + 1) if len(rows) else 1))
            stem = os.path.splitext(os.path.basename(path))[0]
            for lane in range(n_lanes):
                out = os.path.join(out_dir, f"{stem}_time_space_lane{lane}.svg")
                with open(out, "w") as fh:
                    fh.write(time_space_svg(rows, lane, dt, comments))
                written.append(out)
    elif kind == "flow_density":
        series, prov = {}, []
        for path in inputs:
            comments, rows = read_csv(path, LOOP_HEADER)
            label = os.path.basename(os.path.dirname(os.path.abspath(path))) or path
            if label in series:
                label = path
            series[label] = rows
            prov += [f"[{label}] {c}" for c in comments]
        out = os.path.join(out_dir, "flow_density.svg")
        with open(out, "w") as fh:
            fh.write(flow_density_svg(series, prov))
        written.append(out)
    elif kind == "alpha_surface":
        pts, prov, plane = [], [], None
        for path in inputs:
            comments, rows = read_csv(path, "lane_count,t_up,alpha_star")
            pts.append(rows)
            prov += comments
            for c in comments:
                if c.startswith("plane ="):
                    plane = [float(v) for v in c.split("=", 1)[1].split(",")]
        pts = np.concatenate(pts) if pts else np.zeros((0, 3))
        if plane is None and len(pts) >= 3:
            from .experiment import fit_plane
            plane = list(fit_plane(pts[:, 0], pts[:, 1], pts[:, 2])[0])
        out = os.path.join(out_dir, "alpha_surface.svg")
        with open(out, "w") as fh:
            fh.write(alpha_surface_svg(pts, plane, prov))
        written.append(out)
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    return written
