"""End to end on the two-moons toy task: train a weight-sharing supernet,
pick an architecture with evolution, retrain it from scratch.

Run with ``python demos/03_supernet_search.py``.
"""

# %%
from dataclasses import replace

from en2as import CellSpec, NoveltyConfig, SearchConfig, make_dataset, pretty, run_pipeline

data = make_dataset("moons", sizes=(256, 64, 64), noise=0.1, seed=0)
spec = CellSpec(1, 4, 1)
cfg = SearchConfig(epochs=20, archive_size=20, novelty=NoveltyConfig(k=5, gamma=0.5),
                   controller="novelty", selector="evolution", budget=100, retrain_epochs=30)

# %% One full run.  Inherited accuracy ranks candidates, then the winner is
# trained alone from fresh weights and scored on the test split.
result = run_pipeline(cfg, data, spec)
print(pretty(result.genotype))
print(f"inherited val accuracy {result.val_accuracy:.3f}, retrained test accuracy "
      f"{result.test_accuracy:.3f}")
print("archive diversity by epoch:", " ".join(f"{d:.3f}" for d in result.diversity[::4]))

# %% The three controllers side by side on the same seed.
for controller in ("random", "novelty", "novelty+reward"):
    r = run_pipeline(replace(cfg, controller=controller), data, spec)
    print(f"{controller:>15}: final diversity {r.diversity[-1]:.3f}, "
          f"test accuracy {r.test_accuracy:.3f}")
