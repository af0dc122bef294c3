"""
Which lane-change penalty is best?
==================================

A toy version of the alpha sweep: for each (lanes, T_up) condition train
one policy per penalty, keep the fastest, and fit a plane through the
winners.  Step counts here are tiny so the demo finishes; the plane it
prints is noise at this scale.
"""

from cooplane import ScenarioConfig
from cooplane.experiment import cmd_sweep, write_sweep
from cooplane.plotting import cmd_plot

cfg = ScenarioConfig().replace(seed=11)
res = cmd_sweep(cfg, lane_counts=[2, 3], t_up_list=[2.0, 4.0], alphas=[0.0, 4.0, 8.0],
                replicates=1, train_steps=1000, eval_steps=1000)

for (lanes, t_up), alpha in sorted(res.alpha_star.items()):
    table = {a: round(res.speeds[(lanes, t_up, a)], 2) for a in (0.0, 4.0, 8.0)}
    print(f"lanes={lanes} T_up={t_up}: best alpha {alpha}  {table}")
b0, b1, b2 = res.plane
print(f"alpha* ~ {b0:.2f} + {b1:.2f}*lanes + {b2:.2f}*T_up")

paths = write_sweep(res, "demo_out", cfg)
print(cmd_plot([paths["alpha_star"]], "alpha_surface", "demo_out"))
