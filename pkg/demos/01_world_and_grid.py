"""
A few seconds of highway traffic
================================

Two vehicles, one lane change, and the occupancy grid each driver sees.
Run with ``python3 demos/01_world_and_grid.py``.
"""

import numpy as np

from cooplane import ScenarioConfig, World, step
from cooplane.mdp import Action, extract_snapshot
from cooplane.world import newell_speed

# a quiet 3-lane road: no inflow, so only the vehicles we place exist
cfg = ScenarioConfig().replace(**{"spawn.t_up": 1e9, "spawn.jitter": 0.0})
world = World(cfg, rng=np.random.default_rng(0))
slow = world.add_vehicle(x=56.0, lane=1, v=12.0, v_exp=12.0)
fast = world.add_vehicle(x=40.0, lane=1, v=25.0, v_exp=30.0)

# car following: the follower may not exceed the speed that keeps its gap
gap = 56.0 - 40.0 - cfg.road.car_length
print("follower speed cap next step:",
      float(newell_speed(25.0, 30.0, gap, cfg.car_following)))

# what the follower sees: rows are lanes (left, own, right), columns are 1 m cells
grid = extract_snapshot(world, world.index_of(fast))
print("\n".join("".join("#" if c else "." for c in row) for row in grid))

# ask the follower to move left (towards lane 0) and run 5 s; it keeps its
# braked speed afterwards because only the speedup action accelerates
acts = {fast: Action.LEFT}
for t in range(50):
    step(world, acts if t == 0 else None)
for v in world.vehicles():
    print(v)

# 3 s of speedup on the now empty lane
for t in range(30):
    step(world, {fast: Action.SPEEDUP})
print("after speedup:", round(world.v[world.index_of(fast)], 2), "m/s")
