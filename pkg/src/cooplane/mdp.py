"""Occupancy-grid perception and the cooperative reward."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import RewardParams
from .world import World

N_ROWS = 3
N_COLS = 20
BEHIND = 5.0   # metres covered behind the reference line
AHEAD = 15.0   # metres covered ahead of it
N_FRAMES = 3


class Action(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    SPEEDUP = 2
    NONE = 3


@dataclass
class AgentState:
    snapshots: np.ndarray   # (3 frames, 3 rows, 20 cols) uint8, oldest first
    dv_history: np.ndarray  # (3,) m/s, oldest first


def _occupancy_rows(world: World, egos: np.ndarray) -> np.ndarray:
    """Grids for the vehicles at array slots ``egos``: shape (len(egos), 3, 20)."""
    road = world.road
    L = road.car_length
    n_ego = len(egos)
    grid = np.zeros((n_ego, N_ROWS, N_COLS), dtype=np.uint8)
    if n_ego == 0:
        return grid
    idx, lanes = world.lane_entries()
    xs = world.x[idx]
    # a monotone key over (lane, x); the wide stride keeps lanes apart
    stride = 4.0 * (road.road_length + AHEAD + L + 100.0)
    key = lanes * stride + xs
    ref = world.x[egos]
    lo_edge = np.arange(N_COLS) - BEHIND          # cell j covers [j - 5, j - 4)
    hi_edge = lo_edge + 1.0
    for r, offset in enumerate((-1, 0, 1)):
        lane = world.lane[egos] + offset
        exists = (lane >= 0) & (lane < road.lane_count)
        grid[~exists, r, :] = 1
        e = np.flatnonzero(exists)
        if len(e) == 0:
            continue
        base = lane[e] * stride + ref[e]
        start = np.searchsorted(key, base - BEHIND - 1.0, side="left")
        stop = np.searchsorted(key, base + AHEAD + L + 1.0, side="right")
        width = int((stop - start).max()) if len(start) else 0
        if width == 0:
            continue
        cand = start[:, None] + np.arange(width)[None, :]
        valid = cand < stop[:, None]
        cand = np.minimum(cand, len(idx) - 1)
        rel = xs[cand] - ref[e][:, None]                     # (E, K)
        hit = (rel[:, :, None] > lo_edge) & (rel[:, :, None] - L < hi_edge)
        hit &= valid[:, :, None]
        grid[e, r, :] = hit.any(axis=1)
    return grid


def extract_snapshot(world: World, ego: int) -> np.ndarray:
    """3x20 occupancy grid around the vehicle at array slot ``ego``.

    Rows are (left lane, own lane, right lane); column ``j`` covers
    ``[ref + j - 5, ref + j - 4)`` with ``ref`` the ego's front bumper.  A cell
    is 1 when a vehicle body overlaps it with positive length.  Lanes that do
    not exist are filled with ones.
    """
    return _occupancy_rows(world, np.array([ego]))[0]


def extract_all_snapshots(world: World) -> np.ndarray:
    return _occupancy_rows(world, np.arange(len(world)))


class StateHistory:
    """Rolling three-frame history for every live vehicle, aligned with ``world`` order."""

    def __init__(self):
        self.ids = np.zeros(0, dtype=np.int64)
        self.grids = np.zeros((0, N_FRAMES, N_ROWS, N_COLS), dtype=np.uint8)
        self.dv = np.zeros((0, N_FRAMES))

    def update(self, world: World) -> None:
        """Append the current frame for every vehicle; newcomers replicate their first frame."""
        frame = extract_all_snapshots(world)
        dv = world.v - world.v_exp
        n = len(world)
        grids = np.repeat(frame[:, None], N_FRAMES, axis=1)
        dvs = np.repeat(dv[:, None], N_FRAMES, axis=1)
        if len(self.ids):
            pos = np.searchsorted(self.ids, world.ids)
            pos = np.minimum(pos, len(self.ids) - 1)
            known = self.ids[pos] == world.ids
            grids[known, :-1] = self.grids[pos[known], 1:]
            dvs[known, :-1] = self.dv[pos[known], 1:]
        self.ids = world.ids.copy()
        self.grids = grids
        self.dv = dvs
        assert len(self.ids) == n

    def state_arrays(self):
        return self.grids, self.dv

    def assemble_state(self, vehicle_id: int) -> AgentState:
        i = int(np.searchsorted(self.ids, vehicle_id))
        if i >= len(self.ids) or self.ids[i] != vehicle_id:
            raise KeyError(f"no history for vehicle {vehicle_id}")
        return AgentState(self.grids[i].copy(), self.dv[i].copy())


def assemble_state(history: StateHistory, ego_id: int) -> AgentState:
    return history.assemble_state(ego_id)


def measure_q(x_ego, loops, step: int, lane_count: int, params: RewardParams, dt: float):
    """Normalised recent flow at the loop nearest downstream of each ego position.

    ``loops`` is a sequence of detectors ordered by position.  Counts use the
    last ``q_window`` seconds ending at ``step``.
    """
    x_ego = np.atleast_1d(np.asarray(x_ego, dtype=float))
    if not loops:
        return np.zeros_like(x_ego)
    window_steps = int(round(params.q_window / dt))
    positions = np.array([d.x_loop for d in loops])
    counts = np.array([d.count_between(step - window_steps + 1, step) for d in loops], float)
    k = np.searchsorted(positions, x_ego, side="right")
    downstream = k < len(loops)
    q = np.zeros_like(x_ego)
    q[downstream] = counts[k[downstream]] / (params.q_window * lane_count * params.q_ref)
    return q


def compute_reward(dv, changed_lane, q, params: RewardParams):
    """Speed-deficit term plus lane-change penalty plus flow term."""
    r_v = np.asarray(dv, dtype=float) / (params.v_max - params.v_min)
    r_cl = np.where(changed_lane, -params.alpha, 0.0)
    out = r_v + r_cl + np.asarray(q, dtype=float)
    return float(out) if np.ndim(out) == 0 else out
