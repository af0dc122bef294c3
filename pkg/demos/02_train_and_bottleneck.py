"""
Train a lane-change policy, then close a lane
=============================================

A short online training run without an incident, followed by a greedy
evaluation where a bottleneck at 1300 m halts vehicles with a probability
that decays linearly.  Writes a time-space SVG to ``demo_out/``.

This takes a few minutes on one core; raise ``TRAIN_STEPS`` for a policy
that has actually learned something.
"""

import os

from cooplane import ScenarioConfig, evaluate, train
from cooplane.plotting import cmd_plot
from cooplane.training import TRAJECTORY_HEADER

TRAIN_STEPS = 5000
EVAL_STEPS = 6000
OUT = "demo_out"

cfg = ScenarioConfig().replace(**{"reward.alpha": 8.0, "seed": 3})
result = train(cfg.replace(**{"bottleneck.enabled": False}), steps=TRAIN_STEPS)
print("updates:", result.updates, "target syncs:", result.syncs)
print("last log row (step, loss, reward, speed):", result.log_rows[-1])

# incident from step 1000 to 5000 at x = 1300 m
bcfg = cfg.replace(**{"bottleneck.enabled": True, "bottleneck.start_step": 1000,
                      "bottleneck.end_step": 5000, "log_every": 10})
os.makedirs(OUT, exist_ok=True)
traj_path = os.path.join(OUT, "trajectory.csv")
with open(traj_path, "w") as fh:
    fh.write(TRAJECTORY_HEADER + "\n")
    res = evaluate(bcfg, result.network, steps=EVAL_STEPS, trajectory=fh)

print(f"mean speed {res.mean_speed:.2f} m/s, "
      f"{res.lane_changes_per_vehicle_km:.3f} lane changes per vehicle-km, "
      f"{res.throughput} vehicles past the last loop")
for lane in range(bcfg.road.lane_count):
    print(f"lane {lane}: {res.speeds.lane_mean(lane):.2f} m/s")

print(cmd_plot([traj_path], "time_space", OUT))
