"""Closed-loop simulation: one shared Q-network drives every vehicle.

``train`` learns online from all vehicles' transitions; ``evaluate`` runs the
greedy policy with learning switched off and collects the outputs used for
reporting (trajectories, exits, loop records, lane-change counts).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from . import dqn
from .config import ScenarioConfig
from .mdp import StateHistory, compute_reward, measure_q
from .metrics import SpeedAccumulator, make_loops, record_crossings
from .world import NONE, World, step

log = logging.getLogger(__name__)

TRAIN_LOG_HEADER = "step,mean_loss,mean_reward,mean_speed"
TRAJECTORY_HEADER = "step,vehicle_id,lane,x,y,v,v_y,changing"
EXIT_HEADER = "vehicle_id,spawn_step,exit_step,mean_speed"


def seed_streams(seed: int) -> dict:
    """Independent generators for world, policy, replay sampling and weight init."""
    names = ("world", "policy", "replay", "init")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(s) for n, s in zip(names, children)}


@dataclass
class TrainResult:
    network: dqn.QNetwork
    log_rows: list = field(default_factory=list)   # (step, mean_loss, mean_reward, mean_speed)
    updates: int = 0
    syncs: int = 0


@dataclass
class EvalResult:
    mean_speed: float
    throughput: int              # crossings at the most downstream loop
    lane_changes: int
    vehicle_km: float
    loops: list
    exit_log: list
    speeds: SpeedAccumulator
    steps: int
    mean_expected_speed: float = float("nan")   # v_exp averaged over the same vehicle-steps

    @property
    def lane_changes_per_vehicle_km(self) -> float:
        return self.lane_changes / self.vehicle_km if self.vehicle_km > 0 else 0.0


class ClosedLoop:
    """World + perception + policy, advanced one step at a time."""

    def __init__(self, config: ScenarioConfig, net: dqn.QNetwork, streams: dict,
                 eps_exploit: float):
        self.config = config
        self.net = net
        self.streams = streams
        self.eps = eps_exploit
        self.world = World(config, rng=streams["world"])
        self.history = StateHistory()
        self.history.update(self.world)
        self.loops = make_loops(config.road.road_length, config.loop_spacing)

    def advance(self):
        """One step.  Returns the transitions of vehicles that made a decision."""
        world, history = self.world, self.history
        grids, dvs = history.state_arrays()
        deciders = np.flatnonzero(~world.changing)
        acts = np.full(len(world), NONE, dtype=np.int64)
        chosen = dqn.select_actions(self.net, grids[deciders], dvs[deciders], self.eps,
                                    self.streams["policy"])
        acts[deciders] = chosen
        ids_before = world.ids[deciders]
        s_grids, s_dv = grids[deciders], dvs[deciders]

        info = step(world, acts)
        record_crossings(world, self.loops)
        history.update(world)

        # transitions of deciders still on the road
        pos = np.searchsorted(world.ids, ids_before)
        pos = np.minimum(pos, max(len(world) - 1, 0))
        alive = (world.ids[pos] == ids_before) if len(world) else np.zeros(len(ids_before), bool)
        pos = pos[alive]
        new_grids, new_dv = history.state_arrays()
        r = compute_reward(new_dv[pos, -1], info.changed[deciders][alive],
                           measure_q(world.x[pos], self.loops, info.step,
                                     self.config.road.lane_count, self.config.reward,
                                     self.config.road.dt),
                           self.config.reward)
        return (s_grids[alive], s_dv[alive], chosen[alive], np.atleast_1d(r),
                new_grids[pos], new_dv[pos], info)


class Learner:
    """Online/target pair with the SGD update and the periodic target refresh."""

    def __init__(self, online: dqn.QNetwork, config, rng: np.random.Generator):
        self.online = online
        self.target = online.copy()
        self.config = config
        self.rng = rng
        self.updates = 0
        self.syncs = 0

    def update(self, buffer: dqn.ReplayBuffer) -> float:
        batch = buffer.sample(self.config.batch_size, self.rng)
        loss, grads = dqn.td_loss(self.online, self.target, batch, self.config.gamma)
        grads = dqn.clip_gradients(grads, self.config.max_grad_norm)
        dqn.sgd_step(self.online, grads, self.config.lr)
        self.updates += 1
        if self.updates % self.config.target_sync == 0:
            dqn.sync_target(self.online, self.target)
            self.syncs += 1
        return loss


def train(config: ScenarioConfig, seed: Optional[int] = None, steps: Optional[int] = None,
          log_interval: int = 100, net: Optional[dqn.QNetwork] = None) -> TrainResult:
    """Online DQN training in the scenario described by ``config``."""
    config.validate()
    seed = config.seed if seed is None else seed
    steps = config.total_steps if steps is None else steps
    dcfg = config.dqn
    streams = seed_streams(seed)
    online = net.copy() if net is not None else dqn.QNetwork(rng=streams["init"])
    result = TrainResult(online)
    if steps == 0:
        return result
    learner = Learner(online, dcfg, streams["replay"])
    loop = ClosedLoop(config, online, streams, dcfg.eps_exploit)
    buffer = dqn.ReplayBuffer(dcfg.capacity)
    losses, rewards, speeds = [], [], []
    for t in range(steps):
        s_g, s_dv, a, r, n_g, n_dv, _ = loop.advance()
        buffer.push_batch(s_g, s_dv, a, r, n_g, n_dv)
        rewards.extend(r.tolist())
        speeds.extend(loop.world.v.tolist())
        if len(buffer) >= dcfg.warmup:
            losses.append(learner.update(buffer))
        if (t + 1) % log_interval == 0 or t + 1 == steps:
            result.log_rows.append((t, _mean(losses), _mean(rewards), _mean(speeds)))
            losses, rewards, speeds = [], [], []
            if (t + 1) % (50 * log_interval) == 0:
                log.info("train step %d: %s", t + 1, result.log_rows[-1])
    result.updates, result.syncs = learner.updates, learner.syncs
    return result


def _mean(values) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def evaluate(config: ScenarioConfig, net: dqn.QNetwork, seed: Optional[int] = None,
             steps: Optional[int] = None, trajectory: Optional[TextIO] = None) -> EvalResult:
    """Greedy roll-out without learning; optionally streams the trajectory CSV."""
    config.validate()
    seed = config.seed if seed is None else seed
    steps = config.total_steps if steps is None else steps
    streams = seed_streams(seed)
    loop = ClosedLoop(config, net, streams, eps_exploit=1.0)
    world = loop.world
    acc = SpeedAccumulator(config.road.lane_count)
    lane_changes = 0
    distance = 0.0
    v_exp_sum = 0.0
    every = config.log_every
    for t in range(steps):
        info = loop.advance()[-1]
        lane_changes += int(info.changed.sum())
        acc.add(world.lane, world.v)
        v_exp_sum += float(world.v_exp.sum())
        distance += float(np.sum(info.v_moved)) * config.road.dt
        if trajectory is not None and every and t % every == 0:
            write_trajectory_rows(trajectory, t, world)
    speeds_mean = acc.mean() if acc.count else 0.0
    downstream = loop.loops[-1] if loop.loops else None
    return EvalResult(speeds_mean, len(downstream.steps) if downstream else 0, lane_changes,
                      distance / 1000.0, loop.loops, list(world.exit_log), acc, steps,
                      v_exp_sum / acc.count if acc.count else 0.0)


def write_trajectory_rows(fh: TextIO, t: int, world: World) -> None:
    changing = world.changing.astype(int)
    rows = [f"{t},{i},{ln},{x:.3f},{y:.3f},{v:.3f},{vy:.3f},{c}\n"
            for i, ln, x, y, v, vy, c in zip(world.ids.tolist(), world.lane.tolist(),
                                             world.x.tolist(), world.y.tolist(),
                                             world.v.tolist(), world.vy.tolist(),
                                             changing.tolist())]
    fh.writelines(rows)
