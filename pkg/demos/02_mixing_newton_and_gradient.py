"""Least squares on a random network where only some agents run Newton steps.

The regenerated first reference setup has ten agents, five features per
agent, and badly scaled features. Each schedule is tuned on the power-of-two
grid and we count iterations to a relative error of 1e-8. More Newton agents
should mean fewer iterations.

Run with ``python3 demos/02_mixing_newton_and_gradient.py``. The full grid
takes under two minutes on one core.
"""

import math

from dish import UpdateSchedule, setup1_config, tune
from dish.harness import build_instance

config = setup1_config(seed=0)
inst = build_instance(config)
print(f"{inst.n} agents, {inst.topology.graph.num_edges} links, s = {inst.s:.3f}, l = {inst.l:.2f}")

# %% sweep the number of Newton agents
rows = []
for K in (0, 2, math.ceil(inst.n / 2), 8, inst.n):
    sched = UpdateSchedule.dish_k(inst.n, K)
    res = tune(inst, sched, config.tuning)
    s = res.steps
    rows.append((K, res.iterations, s.a[0], s.b[0], s.mu))
    print(f"DISH-{K:<2d}  iterations {str(res.iterations):>6}   a={s.a[0]:<7g} b={s.b[0]:<7g} mu={s.mu:g}")

# %% agents that switch kinds periodically
sched = UpdateSchedule.switching(inst.n, "uniform", 5, 50, seed=11)
res = tune(inst, sched, config.tuning)
print(f"switching every 5..50 steps: {res.iterations} iterations")
