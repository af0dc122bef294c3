"""Experiment drivers behind the command line: train, eval, sweep."""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import dqn
from .config import ALPHA_SET, ScenarioConfig, dump_config
from .metrics import LOOP_HEADER, aggregate_all
from .training import (EXIT_HEADER, TRAIN_LOG_HEADER, TRAJECTORY_HEADER, evaluate, train)


def provenance_lines(config: ScenarioConfig, seed: int) -> str:
    """Comment block naming the seed and every config value."""
    body = "".join(f"# {line}\n" for line in dump_config(config).splitlines())
    return f"# seed = {seed}\n{body}"


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_train(config: ScenarioConfig, out_dir: str, seed: Optional[int] = None,
              steps: Optional[int] = None) -> dict:
    """Train, then write ``qnet.ckpt``, ``train_log.csv`` and ``config.txt`` into ``out_dir``."""
    config.validate()
    seed = config.seed if seed is None else seed
    if config.bottleneck is not None:
        raise ValueError("bottleneck: training runs without an incident; disable bottleneck.enabled")
    result = train(config, seed=seed, steps=steps)
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, n) for k, n in
             (("checkpoint", "qnet.ckpt"), ("log", "train_log.csv"), ("config", "config.txt"))}
    dqn.save_checkpoint(result.network, paths["checkpoint"], config.dqn,
                        extra={"seed": seed, "config": dump_config(config)})
    with open(paths["log"], "w") as fh:
        fh.write(provenance_lines(config, seed))
        fh.write(TRAIN_LOG_HEADER + "\n")
        for t, loss, reward, speed in result.log_rows:
            fh.write(f"{t},{_fmt(loss)},{_fmt(reward)},{_fmt(speed)}\n")
    with open(paths["config"], "w") as fh:
        fh.write(f"# seed = {seed}\n")
        fh.write(dump_config(config))
    return paths


def cmd_eval(checkpoint: str, config: ScenarioConfig, out_dir: str, seed: Optional[int] = None,
             steps: Optional[int] = None) -> dict:
    """Greedy evaluation; writes trajectory/exit/loop CSVs and ``summary.json``."""
    config.validate()
    seed = config.seed if seed is None else seed
    net, _header = dqn.load_checkpoint(checkpoint)
    os.makedirs(out_dir, exist_ok=True)
    head = provenance_lines(config, seed)
    traj_path = os.path.join(out_dir, "trajectory.csv")
    with open(traj_path, "w") as traj:
        traj.write(head)
        traj.write(TRAJECTORY_HEADER + "\n")
        res = evaluate(config, net, seed=seed, steps=steps,
                       trajectory=traj if config.log_every else None)
    exit_path = os.path.join(out_dir, "exits.csv")
    with open(exit_path, "w") as fh:
        fh.write(head)
        fh.write(EXIT_HEADER + "\n")
        for vid, s0, s1, mv in res.exit_log:
            fh.write(f"{vid},{s0},{s1},{_fmt(mv)}\n")
    loop_path = os.path.join(out_dir, "loops.csv")
    records = aggregate_all(res.loops, config.fd_window, res.steps, config.road.dt,
                            config.road.lane_count)
    with open(loop_path, "w") as fh:
        fh.write(head)
        fh.write(LOOP_HEADER + "\n")
        for rec in records:
            fh.write(f"{res.loops[rec.loop_index].x_loop!r},{rec.window_start_step},"
                     f"{_fmt(rec.q)},{_fmt(rec.k)},{_fmt(rec.v_space)}\n")
    summary = {
        "seed": seed,
        "checkpoint": os.path.basename(checkpoint),
        "steps": res.steps,
        "mean_speed": res.mean_speed,
        "mean_expected_speed": res.mean_expected_speed,
        "throughput_downstream": res.throughput,
        "lane_changes": res.lane_changes,
        "vehicle_km": res.vehicle_km,
        "lane_changes_per_vehicle_km": res.lane_changes_per_vehicle_km,
        "config": dump_config(config),
    }
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"trajectory": traj_path, "exits": exit_path, "loops": loop_path,
            "summary": summary_path, "result": res}


# -- alpha sweep ---------------------------------------------------------------

@dataclass
class SweepResult:
    speeds: dict                       # (lanes, t_up, alpha) -> mean over replicates
    replicate_speeds: dict             # (lanes, t_up, alpha) -> list per replicate
    alpha_star: dict                   # (lanes, t_up) -> alpha
    plane: np.ndarray                  # (b0, b1, b2): alpha* ~ b0 + b1*lanes + b2*t_up
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    replicates: int = 1


def best_alpha(speeds_by_alpha: dict) -> float:
    """Argmax of mean speed; ties go to the smaller alpha."""
    if not speeds_by_alpha:
        raise ValueError("no alpha values to choose from")
    best = None
    for alpha in sorted(speeds_by_alpha):
        if best is None or speeds_by_alpha[alpha] > speeds_by_alpha[best]:
            best = alpha
    return best


def fit_plane(lanes, t_up, alpha_star):
    """Ordinary least squares ``alpha* = b0 + b1*lanes + b2*t_up``.

    Returns ``(coefficients, residuals)``; rank-deficient designs get the
    minimum-norm solution.
    """
    lanes = np.asarray(lanes, dtype=float)
    t_up = np.asarray(t_up, dtype=float)
    y = np.asarray(alpha_star, dtype=float)
    if len(y) == 0:
        raise ValueError("nothing to fit")
    design = np.column_stack([np.ones_like(lanes), lanes, t_up])
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    return beta, y - design @ beta


def sweep_cell(config: ScenarioConfig, lanes: int, t_up: float, alpha: float, seed: int,
               train_steps: int, eval_steps: int) -> float:
    """Train one policy for a sweep condition and return its greedy mean speed."""
    cfg = config.replace(**{"road.lane_count": lanes, "spawn.t_up": t_up,
                            "reward.alpha": alpha, "seed": seed, "bottleneck.enabled": False})
    net = train(cfg, seed=seed, steps=train_steps).network
    return evaluate(cfg, net, seed=seed, steps=eval_steps).mean_speed


def _run_cell(args):
    n, tu, a, seed, config, train_steps, eval_steps = args
    return (n, tu, a, seed), sweep_cell(config, n, tu, a, seed, train_steps, eval_steps)


def cmd_sweep(base_config: ScenarioConfig, lane_counts: Sequence[int], t_up_list: Sequence[float],
              alphas: Sequence[float] = ALPHA_SET, replicates: int = 3,
              train_steps: int = 30000, eval_steps: int = 20000, parallel: int = 1,
              cell_fn: Optional[Callable] = None) -> SweepResult:
    """Grid over (lanes, T_up, alpha) with ``replicates`` seeds ``seed + r`` per cell.

    ``cell_fn(lanes, t_up, alpha, seed) -> mean speed`` replaces the
    train-and-evaluate cell when given.
    """
    if not lane_counts or not t_up_list or not alphas:
        raise ValueError("sweep grid is empty")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    base_config.validate()
    jobs = [(int(n), float(tu), float(a), base_config.seed + r)
            for n in lane_counts for tu in t_up_list for a in alphas for r in range(replicates)]
    results = {}
    if cell_fn is not None:
        for job in jobs:
            results[job] = float(cell_fn(*job))
    elif parallel > 1:
        payload = [(n, tu, a, s, base_config, train_steps, eval_steps) for n, tu, a, s in jobs]
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            for key, value in pool.map(_run_cell, payload):
                results[key] = value
    else:
        for job in jobs:
            results[job] = sweep_cell(base_config, *job, train_steps, eval_steps)
    return summarize_sweep(results, replicates)


def summarize_sweep(results: dict, replicates: int) -> SweepResult:
    """Merge ``(lanes, t_up, alpha, seed) -> speed`` into averages, alpha* and the plane."""
    per = {}
    for (n, tu, a, seed) in sorted(results):
        per.setdefault((n, tu, a), []).append(results[(n, tu, a, seed)])
    speeds = {k: float(np.mean(v)) for k, v in per.items()}
    by_cond = {}
    for (n, tu, a), s in speeds.items():
        by_cond.setdefault((n, tu), {})[a] = s
    alpha_star = {cond: best_alpha(table) for cond, table in sorted(by_cond.items())}
    conds = sorted(alpha_star)
    beta, resid = fit_plane([c[0] for c in conds], [c[1] for c in conds],
                            [alpha_star[c] for c in conds])
    return SweepResult(speeds, per, alpha_star, beta, resid, replicates)


def write_sweep(result: SweepResult, out_dir: str, config: ScenarioConfig) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    head = provenance_lines(config, config.seed)
    grid_path = os.path.join(out_dir, "sweep.csv")
    with open(grid_path, "w") as fh:
        fh.write(head)
        fh.write("lane_count,t_up,alpha,mean_speed,replicates\n")
        for (n, tu, a), s in sorted(result.speeds.items()):
            fh.write(f"{n},{tu!r},{a!r},{_fmt(s)},{len(result.replicate_speeds[(n, tu, a)])}\n")
    star_path = os.path.join(out_dir, "alpha_star.csv")
    b0, b1, b2 = (float(b) for b in result.plane)
    with open(star_path, "w") as fh:
        fh.write(head)
        fh.write(f"# plane = {b0!r}, {b1!r}, {b2!r}\n")
        fh.write("lane_count,t_up,alpha_star\n")
        for (n, tu), a in sorted(result.alpha_star.items()):
            fh.write(f"{n},{tu!r},{a!r}\n")
    return {"sweep": grid_path, "alpha_star": star_path}


def sweep_to_json(result: SweepResult) -> dict:
    return {
        "alpha_star": [[n, tu, a] for (n, tu), a in sorted(result.alpha_star.items())],
        "plane": [float(b) for b in result.plane],
        "replicates": result.replicates,
    }

