"""Discrete-time multi-lane highway.

Vehicles live in flat numpy arrays (one slot per live vehicle, compacted on
exit).  Lane 0 is the leftmost lane; lateral position ``y`` grows to the
right and the centre of lane ``k`` sits at ``k * lane_width``.  A vehicle in
the middle of a lane change occupies both its source and its target lane.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .config import (BottleneckSchedule, CarFollowingParams, LaneChangeParams,
                     RoadConfig, SafetyParams, ScenarioConfig, SpawnConfig)

LEFT, RIGHT, SPEEDUP, NONE = 0, 1, 2, 3

_FIELDS = ("ids", "x", "y", "lane", "v", "vy", "v_exp", "lc_target", "lc_steps",
           "spawn_step", "drawn", "stuck", "redraw_step", "v_sum", "n_steps")
_DTYPES = dict(ids=np.int64, lane=np.int64, lc_target=np.int64, lc_steps=np.int64,
               spawn_step=np.int64, drawn=bool, stuck=bool, redraw_step=np.int64,
               n_steps=np.int64)


@dataclass
class Vehicle:
    id: int
    x: float
    y: float
    lane: int
    v: float
    v_y: float
    v_exp: float
    lane_change: Optional[tuple] = None  # (target_lane, steps_remaining)
    stuck_until: Optional[int] = None


@dataclass
class StepInfo:
    """What happened during one call to :func:`step`."""

    step: int
    spawned: np.ndarray        # ids
    exited: np.ndarray         # ids
    changed: np.ndarray        # bool, aligned with the pre-spawn vehicle order
    moved_ids: np.ndarray      # every vehicle integrated this step (exited ones included)
    x_before: np.ndarray
    x_after: np.ndarray
    v_moved: np.ndarray


def lane_center(lane, lane_width: float):
    return lane * lane_width


def newell_speed(v, v_exp, gap, params: CarFollowingParams, speedup=False):
    """Next speed under the Newell law, clamped to ``[0, v_exp]``.

    Works elementwise on arrays; ``gap`` may be ``inf`` when there is no leader.
    """
    v = np.asarray(v, dtype=float)
    v_exp = np.asarray(v_exp, dtype=float)
    gap = np.asarray(gap, dtype=float)
    with np.errstate(over="ignore"):
        envelope = v_exp * (1.0 - np.exp(-params.c * gap / v_exp - params.d))
    candidate = np.minimum(v + np.where(speedup, params.v_acc, 0.0), envelope)
    out = np.clip(candidate, 0.0, v_exp)
    return float(out) if out.ndim == 0 else out


def safety_threshold(v, road: RoadConfig, safety: SafetyParams):
    return safety.a1 * road.car_length + safety.a2 * np.asarray(v, dtype=float)


class World:
    """Mutable highway state.  One owner at a time."""

    def __init__(self, config: ScenarioConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.road = config.road
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.step_index = 0
        self.next_id = 0
        self.spawned_total = 0
        self.exited_total = 0
        self.exit_log: list = []
        for name in _FIELDS:
            setattr(self, name, np.zeros(0, dtype=_DTYPES.get(name, float)))
        lanes = config.spawn.lanes or tuple(range(self.road.lane_count))
        self.spawn_lanes = tuple(int(k) for k in lanes)
        self.next_spawn = {k: self._draw_period() for k in self.spawn_lanes}
        self.pending_v_exp: dict = {}
        self.last_info: Optional[StepInfo] = None

    # -- bookkeeping -------------------------------------------------------
    def __len__(self) -> int:
        return len(self.ids)

    def index_of(self, vehicle_id: int) -> int:
        hit = np.flatnonzero(self.ids == vehicle_id)
        if len(hit) == 0:
            raise KeyError(f"unknown vehicle id {vehicle_id}")
        return int(hit[0])

    def add_vehicle(self, x: float, lane: int, v: float, v_exp: float,
                    vehicle_id: Optional[int] = None) -> int:
        """Place a vehicle directly (scenario setup and tests)."""
        if vehicle_id is None:
            vehicle_id = self.next_id
        self.next_id = max(self.next_id, vehicle_id + 1)
        row = dict(ids=vehicle_id, x=x, y=lane_center(lane, self.road.lane_width), lane=lane,
                   v=v, vy=0.0, v_exp=v_exp, lc_target=-1, lc_steps=0,
                   spawn_step=self.step_index, drawn=False, stuck=False, redraw_step=-1,
                   v_sum=0.0, n_steps=0)
        for name in _FIELDS:
            arr = getattr(self, name)
            setattr(self, name, np.append(arr, np.array([row[name]], dtype=arr.dtype)))
        self.spawned_total += 1
        return vehicle_id

    def _keep(self, mask: np.ndarray) -> None:
        for name in _FIELDS:
            setattr(self, name, getattr(self, name)[mask])

    def vehicles(self) -> list:
        out = []
        for i in range(len(self)):
            lc = None
            if self.lc_target[i] >= 0:
                lc = (int(self.lc_target[i]), int(self.lc_steps[i]))
            out.append(Vehicle(int(self.ids[i]), float(self.x[i]), float(self.y[i]),
                               int(self.lane[i]), float(self.v[i]), float(self.vy[i]),
                               float(self.v_exp[i]), lc,
                               int(self.redraw_step[i]) if self.stuck[i] else None))
        return out

    @property
    def changing(self) -> np.ndarray:
        return self.lc_target >= 0

    def _draw_period(self) -> int:
        sp = self.config.spawn
        factor = 1.0 + sp.jitter * self.rng.uniform(-1.0, 1.0) if sp.jitter > 0 else 1.0
        return max(1, int(round(sp.t_up * factor / self.road.dt)))

    # -- geometry ----------------------------------------------------------
    def lane_entries(self):
        """(vehicle index, lane) pairs, one per occupied lane, sorted by lane then x then id."""
        n = len(self)
        ch = np.flatnonzero(self.changing)
        idx = np.concatenate([np.arange(n), ch])
        lanes = np.concatenate([self.lane, self.lc_target[ch]])
        order = np.lexsort((self.ids[idx], self.x[idx], lanes))
        return idx[order], lanes[order]

    def leaders(self, pairs=None):
        """Tightest leader per vehicle over every lane it occupies.

        Returns ``(gap, leader_index)`` where ``gap`` is bumper-to-bumper
        (``inf`` and ``-1`` when nothing is ahead) and, for a vehicle in two
        lanes, the entry with the smaller gap wins.  ``pairs`` reuses a
        ``lane_leaders()`` result computed on the same state.
        """
        n = len(self)
        gap = np.full(n, np.inf)
        lead = np.full(n, -1, dtype=np.int64)
        if n == 0:
            return gap, lead
        follower, leader, g = self.lane_leaders() if pairs is None else pairs
        np.minimum.at(gap, follower, g)
        tight = g == gap[follower]
        lead[follower[tight]] = leader[tight]
        return gap, lead

    def lane_leaders(self):
        """Per-entry leader pairs: ``(follower, leader, gap)`` for every occupied lane."""
        if len(self) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        idx, lanes = self.lane_entries()
        same = lanes[1:] == lanes[:-1]
        follower = idx[:-1][same]
        leader = idx[1:][same]
        return follower, leader, self.x[leader] - self.road.car_length - self.x[follower]


def spawn_vehicles(world: World, spawn: Optional[SpawnConfig] = None,
                   rng: Optional[np.random.Generator] = None) -> list:
    """Fire due per-lane departure clocks; a blocked entrance defers the departure."""
    spawn = spawn or world.config.spawn
    rng = rng or world.rng
    road, safety = world.road, world.config.safety
    created = []
    for lane in world.spawn_lanes:
        if world.step_index < world.next_spawn[lane]:
            continue
        if spawn.max_vehicles and len(world) >= spawn.max_vehicles:
            continue
        if lane not in world.pending_v_exp:
            v_exp = rng.uniform(*spawn.v_exp_range)
            v0 = v_exp * rng.uniform(*spawn.v0_fraction)
            world.pending_v_exp[lane] = (v_exp, v0)
        v_exp, v0 = world.pending_v_exp[lane]
        reach = safety.a1 * road.car_length + safety.a2 * v0
        in_lane = (world.lane == lane) | (world.lc_target == lane)
        xs = world.x[in_lane]
        if np.any((xs >= 0.0) & (xs - road.car_length < reach)):
            continue
        del world.pending_v_exp[lane]
        created.append(world.add_vehicle(0.0, lane, v0, v_exp))
        world.next_spawn[lane] = world.step_index + world._draw_period()
    return created


def begin_lane_change(world: World, index: int, direction: int,
                      params: Optional[LaneChangeParams] = None) -> bool:
    """Try to start a lane change for the vehicle at array slot ``index``.

    Rejected when a maneuver is already running (lockout), the target lane does
    not exist, the vehicle is held by the bottleneck, or a target-lane body lies
    within ``min_gap`` of the ego body.  Maneuvers never stack: a vehicle may
    occupy at most two lanes, so the lockout holds even when
    ``params.lockout`` is off.
    """
    params = params or world.config.lane_change
    road = world.road
    if world.lc_target[index] >= 0:
        return False
    if world.stuck[index]:
        return False
    target = int(world.lane[index]) + (-1 if direction == LEFT else 1)
    if target < 0 or target >= road.lane_count:
        return False
    occupied = (world.lane == target) | (world.lc_target == target)
    occupied[index] = False
    xo = world.x[occupied]
    xe = world.x[index]
    L = road.car_length
    too_close = (xo - L - xe < params.min_gap) & (xe - L - xo < params.min_gap)
    if np.any(too_close):
        return False
    n_steps = max(1, int(round(params.t_change / road.dt)))
    world.lc_target[index] = target
    world.lc_steps[index] = n_steps
    sign = -1.0 if direction == LEFT else 1.0
    world.vy[index] = sign * road.lane_width / params.t_change
    return True


def collision_check(world: World, v_next: np.ndarray, pairs=None) -> np.ndarray:
    """Cap candidate speeds of vehicles too close to a leader.

    A follower inside ``a1*L + a2*v`` of its leader (in any lane it occupies)
    is limited to ``max(0, v_leader - v_cc)`` using the leader's current speed.
    A final kinematic clamp keeps each follower's travel within the gap plus
    its leader's travel, so bodies never overlap after integration.
    """
    road, safety = world.road, world.config.safety
    v_next = np.asarray(v_next, dtype=float).copy()
    follower, leader, gap = world.lane_leaders() if pairs is None else pairs
    if len(follower) == 0:
        return v_next
    if safety.enabled:
        trigger = gap <= safety_threshold(world.v[follower], road, safety)
        cap = np.maximum(0.0, world.v[leader] - safety.v_cc)
        f, c = follower[trigger], cap[trigger]
        np.minimum.at(v_next, f, c)
        dt = road.dt
        slack = np.maximum(gap, 0.0) / dt
        for _ in range(len(v_next) + 1):
            bound = slack + v_next[leader]
            over = v_next[follower] > bound
            if not np.any(over):
                break
            np.minimum.at(v_next, follower[over], bound[over])
        np.maximum(v_next, 0.0, out=v_next)
    return v_next


def apply_bottleneck(world: World, schedule: Optional[BottleneckSchedule], step: int,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Update hold flags around the incident; returns the boolean stuck mask."""
    rng = rng or world.rng
    if schedule is None or not schedule.active(step):
        world.stuck[:] = False
        return world.stuck
    p = schedule.stuck_ratio(step)
    period = max(1, int(round(schedule.rehold_interval / world.road.dt)))
    in_zone = np.abs(world.x - schedule.x_bottle) <= schedule.zone_radius
    entering = np.flatnonzero(in_zone & ~world.drawn)
    if len(entering):
        held = rng.random(len(entering)) < p
        world.drawn[entering] = True
        world.stuck[entering] = held
        world.redraw_step[entering] = np.where(held, step + period, -1)
    due = np.flatnonzero(world.stuck & (world.redraw_step <= step) & (world.redraw_step >= 0))
    due = due[~np.isin(due, entering)]
    if len(due):
        keep = rng.random(len(due)) < p
        world.stuck[due] = keep
        world.redraw_step[due] = np.where(keep, world.redraw_step[due] + period, -1)
    return world.stuck


ActionInput = Union[Mapping[int, int], Sequence[int], np.ndarray, None]


def _action_array(world: World, actions: ActionInput) -> np.ndarray:
    n = len(world)
    if actions is None:
        return np.full(n, NONE, dtype=np.int64)
    if isinstance(actions, Mapping):
        arr = np.full(n, NONE, dtype=np.int64)
        pos = {int(i): k for k, i in enumerate(world.ids)}
        for vid, a in actions.items():
            if int(vid) not in pos:
                raise KeyError(f"action for unknown vehicle id {vid}")
            arr[pos[int(vid)]] = int(a)
        return arr
    arr = np.asarray(actions, dtype=np.int64)
    if arr.shape != (n,):
        raise ValueError(f"expected {n} actions, got shape {arr.shape}")
    return arr


def step(world: World, actions: ActionInput = None) -> StepInfo:
    """Advance one time step.

    ``actions`` is either a mapping ``vehicle id -> action`` or an array
    aligned with the current vehicle order; vehicles spawned during the step
    act ``none``.
    """
    cfg = world.config
    road = world.road
    t = world.step_index
    acts = _action_array(world, actions)
    n_before = len(world)

    spawned = spawn_vehicles(world)
    n = len(world)
    acts = np.concatenate([acts, np.full(n - n_before, NONE, dtype=np.int64)])

    changed = np.zeros(n, dtype=bool)
    for i in np.flatnonzero((acts == LEFT) | (acts == RIGHT)):
        changed[i] = begin_lane_change(world, int(i), int(acts[i]))

    # positions and lanes stay fixed until integration, so one ordering serves both
    pairs = world.lane_leaders()
    gap, _ = world.leaders(pairs)
    v_next = newell_speed(world.v, world.v_exp, gap, cfg.car_following, acts == SPEEDUP)
    v_next = np.atleast_1d(v_next)

    stuck = apply_bottleneck(world, cfg.bottleneck, t)
    v_next[stuck] = 0.0

    v_next = collision_check(world, v_next, pairs)

    x_before = world.x.copy()
    world.v = v_next
    world.x = world.x + v_next * road.dt
    world.y = world.y + world.vy * road.dt
    world.v_sum += v_next
    world.n_steps += 1
    active = world.lc_target >= 0
    world.lc_steps[active] -= 1
    done = active & (world.lc_steps <= 0)
    if np.any(done):
        world.lane[done] = world.lc_target[done]
        world.y[done] = lane_center(world.lane[done], road.lane_width)
        world.vy[done] = 0.0
        world.lc_target[done] = -1
        world.lc_steps[done] = 0

    moved_ids = world.ids.copy()
    x_after = world.x.copy()
    out = world.x > road.road_length
    exited = world.ids[out]
    for i in np.flatnonzero(out):
        world.exit_log.append((int(world.ids[i]), int(world.spawn_step[i]), t,
                               float(world.v_sum[i] / max(world.n_steps[i], 1))))
    world.exited_total += int(out.sum())
    if np.any(out):
        world._keep(~out)

    world.step_index = t + 1
    info = StepInfo(t, np.asarray(spawned, dtype=np.int64), exited, changed[:n_before],
                    moved_ids, x_before, x_after, v_next.copy())
    world.last_info = info
    return info


def body_overlaps(world: World) -> int:
    """Count pairs of vehicles sharing a lane whose bodies ``[x - L, x]`` overlap."""
    follower, leader, gap = world.lane_leaders()
    return int(np.sum(gap < 0))
