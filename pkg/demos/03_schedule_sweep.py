"""
How to spend a budget of 20 real episodes
=========================================

IW-PGPE reuses old samples through importance weights.  A schedule ``k x r``
gathers ``k`` episodes ``r`` times and runs 100 updates after each batch.
On the Gaussian chain walk, gathering everything at once tends to win.
"""

from mpgpe import TrainConfig, make_env
from mpgpe.trainer import STANDARD_SCHEDULES, schedule_sweep

env = make_env("chainwalk_gaussian")
rows = schedule_sweep(env, TrainConfig(), STANDARD_SCHEDULES, n_runs=20, seed=0)

for r in rows:
    k, reps = r.schedule
    bar = "#" * int(10 * r.mean_return)
    print(f"{k:2d}x{reps:<2d}  {r.mean_return:5.2f} +- {r.std_error:4.2f}  {bar}")
