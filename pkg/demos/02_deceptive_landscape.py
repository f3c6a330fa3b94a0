"""Why novelty helps on deceptive rewards.

A deceptive oracle has a wide, low local basin and a narrow, high global one.
A reward-only hill climber tends to stall on the local slope, while an
evolutionary search seeded from a novelty-spread archive starts from many
distant points.  Run with ``python demos/02_deceptive_landscape.py``.
"""

# %%
import numpy as np

from en2as import CellSpec, TabularOracle, enumerate_space
from en2as.experiments import hill_climb_trial, novelty_ea_trial

spec = CellSpec(1, 4, 1)
oracle = TabularOracle.deceptive(spec, seed=0)
local, glob = oracle.basins
print(f"local peak {local.peak} (width {local.width}), global peak {glob.peak} "
      f"(width {glob.width})")

# %% How much of the space drains towards each basin?
idx = np.array([oracle.basin_index(g) for g in enumerate_space(spec)])
print(f"local basin holds {np.mean(idx == 0):.1%} of genotypes, global {np.mean(idx == 1):.1%}")

# %% Equal budgets, twenty seeds, a fresh landscape per seed.
hits = {"novelty + evolution": 0, "hill climbing": 0}
for seed in range(20):
    o = TabularOracle.deceptive(spec, seed=seed)
    hits["novelty + evolution"] += o.in_global_basin(novelty_ea_trial(o, seed, budget=300).genotype)
    hits["hill climbing"] += o.in_global_basin(hill_climb_trial(o, seed, budget=300).genotype)
for name, n in hits.items():
    print(f"{name:>20}: global basin in {n}/20 runs")
