"""
Two transition models on the bimodal chain walk
===============================================

On the bimodal chain walk an action ``a`` moves the state by ``+a`` or ``-a``
with equal probability.  A GP can only say "somewhere in the middle"; LSCDE
keeps both modes.
"""

import numpy as np

from mpgpe import gp, lscde
from mpgpe.env import collect_uniform_dataset, make_env

env = make_env("chainwalk_bimodal")
data = collect_uniform_dataset(env, 20, np.random.default_rng(0))
print(f"{len(data)} transitions from 20 uniform episodes")

# LSCDE with cross-validated width and ridge
model, cv = lscde.fit_cv(data, lscde.CvGrid(), 1000, np.random.default_rng(1))
print(f"LSCDE: kappa={cv.kappa}, lambda={cv.lam}, {model.M} centres")

# GP with evidence-maximising hyper-parameters
g = gp.gp_fit(data)
print(f"GP: amplitude={g.amplitude}, lengthscale={g.lengthscale[0]}, noise={g.noise_var}")

# density of s' from s=5 under a=2: true modes at 3 and 7
x = np.linspace(0, 10, 11)
p_lscde = lscde.density(model, [5.0], [2.0], x[:, None])
p_gp = gp.gp_density(g, [5.0], [2.0], x[:, None])
print("\n  s'    LSCDE     GP")
for xi, a, b in zip(x, p_lscde, p_gp):
    print(f"{xi:4.0f}  {a:7.3f}  {b:7.3f}")

# a few synthetic next states from each
rng = np.random.default_rng(2)
print("\nLSCDE draws:", np.round([lscde.sample(model, [5.0], [2.0], rng)[0] for _ in range(8)], 2))
print("GP draws:   ", np.round([gp.gp_sample(g, [5.0], [2.0], rng)[0] for _ in range(8)], 2))
