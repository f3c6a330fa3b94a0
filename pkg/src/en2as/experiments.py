"""Seeded desk-scale studies built from the search components.

* :func:`deceptive_study` pits the novelty controller followed by evolution
  against reward-only hill climbing on deceptive oracles, at equal
  evaluation budget.
* :func:`diversity_study` compares final archive diversity of novelty-driven
  and random supernet training over paired seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import stats

from .arch import CellSpec
from .novelty import NoveltyConfig
from .oracle import TabularOracle
from .search import (Controller, SearchConfig, Selection, hill_climb, select_evolution,
                     train_supernet)
from .supernet import MicroDataset


def novelty_ea_trial(oracle: TabularOracle, seed: int, budget: int, archive_size: int = 100,
                     controller_steps: int = 1000, ncfg: NoveltyConfig = NoveltyConfig(),
                     tournament_size: int = 5) -> Selection:
    """Run the novelty controller without training, then evolve from the
    rounded archive.  Only the evolutionary phase queries the oracle."""
    arch_ss, ctrl_ss, sel_ss = np.random.SeedSequence(seed).spawn(3)
    ctrl = Controller(oracle.spec, "novelty", archive_size, ncfg,
                      np.random.default_rng(arch_ss), np.random.default_rng(ctrl_ss))
    for _ in range(archive_size + controller_steps):
        ctrl.propose()
    return select_evolution(oracle, oracle.spec, budget, np.random.default_rng(sel_ss),
                            tournament_size=tournament_size,
                            initial_population=ctrl.archive.genotypes())


def hill_climb_trial(oracle: TabularOracle, seed: int, budget: int) -> Selection:
    return hill_climb(oracle, oracle.spec, budget, np.random.default_rng(seed))


@dataclass
class DeceptiveStudy:
    novelty_hits: np.ndarray
    hill_hits: np.ndarray
    p_value: float

    @property
    def novelty_fraction(self) -> float:
        return float(self.novelty_hits.mean())

    @property
    def hill_fraction(self) -> float:
        return float(self.hill_hits.mean())


def deceptive_study(spec: CellSpec, seeds, budget: int = 300, archive_size: int = 100,
                    controller_steps: int = 1000, ncfg: NoveltyConfig = NoveltyConfig(),
                    **oracle_kwargs) -> DeceptiveStudy:
    """Each seed draws its own deceptive oracle; both methods run on it.

    A run succeeds when its returned genotype lies in the global basin.  The
    p-value is the exact one-sided binomial (McNemar) test on discordant
    pairs.
    """
    nov, hc = [], []
    for seed in seeds:
        oracle = TabularOracle.deceptive(spec, seed=seed, **oracle_kwargs)
        a = novelty_ea_trial(oracle, seed, budget, archive_size, controller_steps, ncfg)
        b = hill_climb_trial(oracle, seed, budget)
        nov.append(oracle.in_global_basin(a.genotype))
        hc.append(oracle.in_global_basin(b.genotype))
    nov, hc = np.array(nov), np.array(hc)
    only_nov = int(np.sum(nov & ~hc))
    only_hc = int(np.sum(hc & ~nov))
    if only_nov + only_hc == 0:
        p = 1.0
    else:
        p = stats.binomtest(only_nov, only_nov + only_hc, 0.5, alternative="greater").pvalue
    return DeceptiveStudy(nov, hc, float(p))


@dataclass
class DiversityStudy:
    novelty: np.ndarray
    random: np.ndarray
    p_value: float


def diversity_study(cfg: SearchConfig, dataset: MicroDataset, spec: CellSpec,
                    seeds) -> DiversityStudy:
    """Final archive diversity of ``novelty`` vs ``random`` training, paired
    by seed, with a one-sided Wilcoxon signed-rank test."""
    nov, rnd = [], []
    for seed in seeds:
        for mode, out in (("novelty", nov), ("random", rnd)):
            run_cfg = replace(cfg, controller=mode, seed=seed)
            _, archive, _ = train_supernet(run_cfg, dataset, spec)
            out.append(archive.diversity())
    nov, rnd = np.array(nov), np.array(rnd)
    if np.all(nov == rnd):
        p = 1.0
    else:
        p = float(stats.wilcoxon(nov, rnd, alternative="greater").pvalue)
    return DiversityStudy(nov, rnd, p)
