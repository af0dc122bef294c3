"""Virtual loop detectors, flow-density aggregation and speed summaries."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

LOOP_HEADER = "loop_x,window_start_step,flow_veh_per_h,density_veh_per_km,space_mean_speed"


@dataclass
class LoopDetector:
    """Cross-section counter spanning every lane at ``x_loop``."""

    x_loop: float
    steps: list = field(default_factory=list)
    vehicle_ids: list = field(default_factory=list)
    speeds: list = field(default_factory=list)
    _seen: set = field(default_factory=set, repr=False)

    @property
    def crossings(self) -> list:
        return list(zip(self.steps, self.vehicle_ids, self.speeds))

    def record(self, step: int, vehicle_id: int, speed: float) -> bool:
        if vehicle_id in self._seen:
            return False
        self._seen.add(vehicle_id)
        self.steps.append(step)
        self.vehicle_ids.append(vehicle_id)
        self.speeds.append(speed)
        return True

    def count_between(self, first_step: int, last_step: int) -> int:
        """Crossings with ``first_step <= step <= last_step``."""
        return bisect.bisect_right(self.steps, last_step) - bisect.bisect_left(self.steps, first_step)

    def speeds_between(self, first_step: int, last_step: int) -> np.ndarray:
        lo = bisect.bisect_left(self.steps, first_step)
        hi = bisect.bisect_right(self.steps, last_step)
        return np.asarray(self.speeds[lo:hi], dtype=float)


@dataclass
class FlowDensityRecord:
    loop_index: int
    window_start_step: int
    q: float        # veh/h
    k: float        # veh/km
    v_space: float  # m/s


def make_loops(road_length: float, spacing: float = 200.0) -> list:
    """Detectors every ``spacing`` metres, the last one at or before the road end."""
    n = int(np.floor(road_length / spacing + 1e-9))
    return [LoopDetector(spacing * (k + 1)) for k in range(n)]


def record_crossings_from(detectors, step: int, ids, x_before, x_after, speeds) -> int:
    """Register every move with ``x_before < x_loop <= x_after``; returns how many were added."""
    added = 0
    x_before = np.asarray(x_before, dtype=float)
    x_after = np.asarray(x_after, dtype=float)
    for det in detectors:
        hit = np.flatnonzero((x_before < det.x_loop) & (det.x_loop <= x_after))
        for i in hit:
            added += det.record(step, int(ids[i]), float(speeds[i]))
    return added


def record_crossings(world, detectors, step: int | None = None) -> int:
    """Crossings made during the world's most recent step."""
    info = world.last_info
    if info is None:
        return 0
    return record_crossings_from(detectors, info.step if step is None else step,
                                 info.moved_ids, info.x_before, info.x_after, info.v_moved)


def aggregate(detector: LoopDetector, window: float, lane_count: int = 1, *,
              start_step: int = 0, dt: float = 0.1, loop_index: int = 0,
              per_lane: bool = False) -> FlowDensityRecord:
    """Flow, density and space-mean speed over ``[start_step, start_step + window/dt)``.

    Space-mean speed is the harmonic mean of spot speeds and density follows
    from ``k = q / v_space``.  Values are cross-section totals unless
    ``per_lane`` divides them by ``lane_count``.
    """
    if window <= 0:
        raise ValueError("window must be > 0")
    n_steps = int(round(window / dt))
    speeds = detector.speeds_between(start_step, start_step + n_steps - 1)
    speeds = speeds[speeds > 0]
    if len(speeds) == 0:
        return FlowDensityRecord(loop_index, start_step, 0.0, 0.0, 0.0)
    q = len(speeds) / window * 3600.0
    if per_lane:
        q /= lane_count
    v_space = len(speeds) / np.sum(1.0 / speeds)
    k = q / (v_space * 3.6)
    return FlowDensityRecord(loop_index, start_step, q, k, float(v_space))


def aggregate_all(detectors, window: float, total_steps: int, dt: float,
                  lane_count: int = 1) -> list:
    n_steps = int(round(window / dt))
    out = []
    for li, det in enumerate(detectors):
        for start in range(0, total_steps, n_steps):
            if start + n_steps > total_steps:
                break
            out.append(aggregate(det, window, lane_count, start_step=start, dt=dt, loop_index=li))
    return out


def mean_travel_speed(speeds=None, *, exit_log=None) -> float:
    """Mean of ``v`` over vehicle-steps.

    Pass either a flat array of per-vehicle-step speeds or an exit log of
    ``(vehicle_id, spawn_step, exit_step, mean_speed)`` rows, which is
    weighted by each vehicle's number of steps.
    """
    if exit_log is not None:
        rows = np.asarray(exit_log, dtype=float).reshape(-1, 4)
        if len(rows) == 0:
            raise ValueError("empty log")
        w = rows[:, 2] - rows[:, 1] + 1
        return float(np.sum(rows[:, 3] * w) / np.sum(w))
    speeds = np.asarray(speeds, dtype=float).ravel()
    if len(speeds) == 0:
        raise ValueError("empty log")
    return float(speeds.mean())


class SpeedAccumulator:
    """Running vehicle-step speed sums, overall and per lane per step."""

    def __init__(self, lane_count: int):
        self.lane_count = lane_count
        self.total = 0.0
        self.count = 0
        self.lane_sums: list = []
        self.lane_counts: list = []

    def add(self, lanes: np.ndarray, speeds: np.ndarray) -> None:
        self.total += float(np.sum(speeds))
        self.count += len(speeds)
        self.lane_sums.append(np.bincount(lanes, weights=speeds, minlength=self.lane_count))
        self.lane_counts.append(np.bincount(lanes, minlength=self.lane_count))

    def mean(self) -> float:
        if self.count == 0:
            raise ValueError("empty log")
        return self.total / self.count

    def lane_mean(self, lane: int, first_step: int = 0, last_step: int | None = None) -> float:
        sums = np.array(self.lane_sums)[first_step:last_step, lane]
        counts = np.array(self.lane_counts)[first_step:last_step, lane]
        return float(sums.sum() / counts.sum()) if counts.sum() else float("nan")
