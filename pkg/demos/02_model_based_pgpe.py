"""
Model-based PGPE on the bimodal chain walk
==========================================

Twenty real episodes are collected once.  Everything after that happens in
the learned model: 2000 synthetic rollouts per update, 20 updates.  The
curves below are real-environment returns of the prior-mean policy.
"""

import numpy as np

from mpgpe import TrainConfig, make_env, train_mpgpe
from mpgpe.trainer import schedule_sweep

env = make_env("chainwalk_bimodal")
seeds = range(5)

curves = {}
for kind in ("lscde", "gp"):
    runs = [train_mpgpe(env, kind, TrainConfig(seed=s), s) for s in seeds]
    curves[kind] = np.array([r.curve.returns for r in runs])
    print(f"{kind}: final {curves[kind][:, -1].mean():.2f} over {len(runs)} seeds")

print("\niter  LSCDE    GP")
for i in range(0, 20, 4):
    print(f"{i + 1:4d}  {curves['lscde'][:, i].mean():5.2f}  {curves['gp'][:, i].mean():5.2f}")

# the model-free reference spends the same 20 episodes on real rollouts;
# with five seeds the spread is large (per-run std is about 0.8), so
# orderings here can flip; tests/test_acceptance.py uses 30
rows = schedule_sweep(env, TrainConfig(), [(20, 1), (10, 2), (1, 20)], len(seeds), seed=0)
for r in rows:
    print(f"IW-PGPE {r.schedule[0]}x{r.schedule[1]}: {r.mean_return:.2f}")
