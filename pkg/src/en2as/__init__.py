"""Novelty-driven one-shot neural architecture search on a numpy supernet."""

from .arch import (MICRO_OPS, CellSpec, ContinuousArch, Genotype, deserialize, distance, lift,
                   mutate, pretty, random_genotype, round_arch, serialize)
from .novelty import (Archive, NoveltyConfig, novelty, novelty_gradient, update_combined,
                      update_novelty)
from .oracle import TabularOracle, brute_force_argmax, enumerate_space
from .search import (RunResult, SearchConfig, run_pipeline, select_evolution, select_random,
                     train_supernet)
from .supernet import SharedWeights, forward, inherited_accuracy, make_dataset, train_step

__version__ = "0.1.0"

__all__ = [
    "MICRO_OPS", "Archive", "CellSpec", "ContinuousArch", "Genotype", "NoveltyConfig",
    "RunResult", "SearchConfig", "SharedWeights", "TabularOracle", "brute_force_argmax",
    "deserialize", "distance", "enumerate_space", "forward", "inherited_accuracy", "lift",
    "make_dataset", "mutate", "novelty", "novelty_gradient", "pretty", "random_genotype",
    "round_arch", "run_pipeline", "select_evolution", "select_random", "serialize",
    "train_step", "train_supernet", "update_combined", "update_novelty",
]
