"""Supernet training driven by an architecture sampling controller, followed
by model selection and retraining of the selected architecture.
"""

from __future__ import annotations

import copy
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .arch import CellSpec, Genotype, lift, mutate, random_genotype, round_arch, serialize
from .novelty import Archive, NoveltyConfig, update_combined, update_novelty
from .supernet import MicroDataset, SharedWeights, inherited_accuracy, train_step

CONTROLLERS = ("random", "novelty", "novelty+reward")
SELECTORS = ("random-search", "evolution")

Evaluator = Callable[[Genotype], float]


@dataclass(frozen=True)
class SearchConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.05
    hidden_dim: int = 8
    archive_size: int = 100
    novelty: NoveltyConfig = field(default_factory=NoveltyConfig)
    controller: str = "novelty"
    selector: str = "evolution"
    budget: int = 100
    population_size: int = 20
    tournament_size: int = 5
    mutation_rate: float = 0.0
    retrain_epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "hidden_dim", "archive_size", "budget",
                     "population_size", "tournament_size", "retrain_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.mutation_rate < 1.0:
            raise ValueError("mutation_rate must lie in [0, 1)")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        if self.selector == "evolution":
            if self.population_size < 2:
                raise ValueError("evolution needs population_size >= 2")
            if self.budget < self.population_size:
                raise ValueError("evolution needs budget >= population_size")
            if self.tournament_size > self.population_size:
                raise ValueError("tournament_size cannot exceed population_size")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["novelty"] = self.novelty.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        d = dict(d)
        d["novelty"] = NoveltyConfig(**d.get("novelty", {}))
        return cls(**d)


class Streams(NamedTuple):
    weights: int
    batches: np.random.Generator
    arch: np.random.Generator
    controller: np.random.Generator
    selection: np.random.Generator


def make_streams(seed: int) -> Streams:
    """Independent generators so that, for one seed, the fill phase and the
    batch order are identical whatever the controller mode."""
    ss = np.random.SeedSequence(seed)
    w, b, a, c, s = ss.spawn(5)
    return Streams(int(w.generate_state(1)[0]), np.random.default_rng(b),
                   np.random.default_rng(a), np.random.default_rng(c), np.random.default_rng(s))


class Controller:
    """Architecture sampler with a fill phase followed by archive updates.

    While the archive is below capacity every mode samples uniformly and
    pushes the sample.  Afterwards ``novelty`` and ``novelty+reward`` pick a
    random member, move it with the corresponding update rule, write it back
    and emit its rounding; ``random`` leaves the archive alone and emits fresh
    uniform samples.
    """

    def __init__(self, spec: CellSpec, mode: str, archive_size: int, ncfg: NoveltyConfig,
                 arch_rng: np.random.Generator, ctrl_rng: np.random.Generator):
        if mode not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        self.spec = spec
        self.mode = mode
        self.ncfg = ncfg
        self.archive = Archive(spec, archive_size)
        self.arch_rng = arch_rng
        self.ctrl_rng = ctrl_rng
        self.pushes = 0
        self.replacements = 0

    def propose(self, evaluator: Evaluator | None = None) -> tuple[str, Genotype]:
        if not self.archive.full:
            g = random_genotype(self.spec, self.arch_rng)
            self.archive.push(lift(g))
            self.pushes += 1
            return "fill", g
        if self.mode == "random":
            return "random", random_genotype(self.spec, self.arch_rng)
        _, m = self.archive.sample(self.ctrl_rng)
        if self.mode == "novelty":
            new = update_novelty(m, self.archive, self.ncfg, self.ctrl_rng)
        else:
            if evaluator is None:
                raise ValueError("novelty+reward controller needs an evaluator")
            new = update_combined(m, self.archive, self.ncfg, evaluator, self.ctrl_rng)
        self.archive.replace(m, new)
        self.replacements += 1
        return "update", round_arch(new)


@dataclass
class TrainingTrace:
    records: list[dict] = field(default_factory=list)
    diversity: list[float] = field(default_factory=list)
    epoch_loss: list[float] = field(default_factory=list)
    best_val_acc: list[float] = field(default_factory=list)
    trained: list[Genotype] = field(default_factory=list)
    pushes: int = 0
    replacements: int = 0


def supernet_evaluator(w: SharedWeights, val_batches) -> Evaluator:
    return lambda g: inherited_accuracy(g, w, val_batches)


def train_supernet(cfg: SearchConfig, dataset: MicroDataset, spec: CellSpec,
                   reward: Evaluator | None = None, streams: Streams | None = None,
                   keep_genotypes: bool = False):
    """Train the shared weights, one sampled architecture per mini-batch.

    ``reward`` replaces the inherited-accuracy reward of the
    ``novelty+reward`` controller (used with tabular oracles).  Returns
    ``(weights, archive, trace)``.
    """
    streams = streams or make_streams(cfg.seed)
    w = SharedWeights.init(spec, dataset.input_dim, cfg.hidden_dim, dataset.num_classes,
                           streams.weights)
    ctrl = Controller(spec, cfg.controller, cfg.archive_size, cfg.novelty,
                      streams.arch, streams.controller)
    val_batches = dataset.batches("val", cfg.batch_size)
    if not val_batches or len(dataset.y_train) == 0:
        raise ValueError("dataset splits must be non-empty")
    trace = TrainingTrace()
    rotation = 0
    step = 0

    def rotating_reward(g: Genotype) -> float:
        return inherited_accuracy(g, w, [val_batches[rotation % len(val_batches)]])

    score = reward if reward is not None else rotating_reward
    for epoch in range(cfg.epochs):
        losses = []
        for batch in dataset.batches("train", cfg.batch_size, streams.batches):
            phase, g = ctrl.propose(score if cfg.controller == "novelty+reward" else None)
            if phase == "update":
                rotation += 1
            loss = train_step(g, w, batch, cfg.lr)
            losses.append(loss)
            if keep_genotypes:
                trace.trained.append(g)
            trace.records.append({"epoch": epoch, "step": step, "phase": phase, "loss": loss,
                                  "diversity": None, "best_val_acc": None})
            step += 1
        div = ctrl.archive.diversity()
        probe = reward or (lambda g: inherited_accuracy(g, w, val_batches[:1]))
        best = max(probe(g) for g in dict.fromkeys(ctrl.archive.genotypes()))
        trace.records[-1]["diversity"] = div
        trace.records[-1]["best_val_acc"] = best
        trace.diversity.append(div)
        trace.best_val_acc.append(best)
        trace.epoch_loss.append(float(np.mean(losses)))
    trace.pushes = ctrl.pushes
    trace.replacements = ctrl.replacements
    return w, ctrl.archive, trace


# -- model selection ---------------------------------------------------------


class Selection(NamedTuple):
    genotype: Genotype
    accuracy: float
    best_curve: list[float]


def select_random(evaluate: Evaluator, spec: CellSpec, budget: int, rng: np.random.Generator,
                  candidates: Sequence[Genotype] | None = None) -> Selection:
    """Score ``budget`` uniform samples and keep the first best.

    ``candidates`` replaces sampling with a fixed list (e.g. a full
    enumeration), of which the first ``budget`` are scored.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if candidates is not None:
        pool = list(candidates)[:budget]
    else:
        pool = [random_genotype(spec, rng) for _ in range(budget)]
    best, best_acc, curve = None, -math.inf, []
    for g in pool:
        acc = evaluate(g)
        if acc > best_acc:
            best, best_acc = g, acc
        curve.append(best_acc)
    return Selection(best, best_acc, curve)


def _extra_mutations(g: Genotype, rate: float, rng: np.random.Generator) -> Genotype:
    for _ in range(g.spec.num_edges):
        if rng.random() >= rate:
            break
        g = mutate(g, rng)
    return g


def select_evolution(evaluate: Evaluator, spec: CellSpec, budget: int, rng: np.random.Generator,
                     population_size: int = 20, tournament_size: int = 5,
                     mutation_rate: float = 0.0,
                     initial_population: Sequence[Genotype] | None = None) -> Selection:
    """Regularized evolution: tournament parent, single-field mutation,
    oldest member evicted.  Every scored genotype costs one unit of budget.

    ``initial_population`` (e.g. the rounded novelty archive) replaces the
    uniform initial population.  ``mutation_rate`` is the chance of each
    further mutation on top of the mandatory one.
    """
    if initial_population is not None:
        population_size = len(initial_population)
    if population_size < 2:
        raise ValueError("population_size must be >= 2")
    if budget < population_size:
        raise ValueError("budget must be >= population_size")
    tournament_size = min(tournament_size, population_size)
    if initial_population is None:
        initial_population = [random_genotype(spec, rng) for _ in range(population_size)]

    population: deque[tuple[Genotype, float]] = deque()
    best, best_acc, curve = None, -math.inf, []

    def record(g: Genotype) -> float:
        nonlocal best, best_acc
        acc = evaluate(g)
        if acc > best_acc:
            best, best_acc = g, acc
        curve.append(best_acc)
        return acc

    for g in initial_population:
        population.append((g, record(g)))
    while len(curve) < budget:
        picks = rng.choice(len(population), size=tournament_size, replace=False)
        parent = max((population[i] for i in picks), key=lambda item: item[1])[0]
        child = _extra_mutations(mutate(parent, rng), mutation_rate, rng)
        population.append((child, record(child)))
        population.popleft()
    return Selection(best, best_acc, curve)


def hill_climb(evaluate: Evaluator, spec: CellSpec, budget: int,
               rng: np.random.Generator) -> Selection:
    """Reward-only stochastic hill climbing from one uniform start; a
    single-field mutant replaces the incumbent only if strictly better."""
    current = random_genotype(spec, rng)
    current_acc = evaluate(current)
    curve = [current_acc]
    while len(curve) < budget:
        child = mutate(current, rng)
        acc = evaluate(child)
        if acc > current_acc:
            current, current_acc = child, acc
        curve.append(current_acc)
    return Selection(current, current_acc, curve)


# -- end to end ------------------------------------------------------------


def retrain(g: Genotype, cfg: SearchConfig, dataset: MicroDataset) -> tuple[SharedWeights, float]:
    """Train ``g`` alone from fresh weights; returns weights and test accuracy."""
    ss = np.random.SeedSequence([cfg.seed, g.stable_hash() & 0xFFFFFFFF, g.stable_hash() >> 32])
    w_ss, b_ss = ss.spawn(2)
    w = SharedWeights.init(g.spec, dataset.input_dim, cfg.hidden_dim, dataset.num_classes,
                           int(w_ss.generate_state(1)[0]))
    rng = np.random.default_rng(b_ss)
    for _ in range(cfg.retrain_epochs):
        for batch in dataset.batches("train", cfg.batch_size, rng):
            train_step(g, w, batch, cfg.lr)
    test_acc = inherited_accuracy(g, w, dataset.batches("test", cfg.batch_size))
    return w, test_acc


@dataclass
class RunResult:
    genotype: Genotype
    val_accuracy: float
    test_accuracy: float
    diversity: list[float]
    loss_curve: list[float]
    best_val_acc: list[float]
    selection_curve: list[float]
    config: dict
    seed: int
    timing: dict
    trace: list[dict] = field(default_factory=list, repr=False)
    archive: Archive | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        """JSON-ready document; wall-clock numbers live under ``timing`` only."""
        return {
            "result": {
                "genotype": serialize(self.genotype),
                "edges": [list(e) for e in self.genotype.edges],
                "val_accuracy": self.val_accuracy,
                "test_accuracy": self.test_accuracy,
                "final_diversity": self.diversity[-1] if self.diversity else None,
            },
            "traces": {
                "diversity": self.diversity,
                "loss": self.loss_curve,
                "best_val_acc": self.best_val_acc,
                "selection_best": self.selection_curve,
            },
            "config": self.config,
            "seed": self.seed,
            "timing": self.timing,
        }


def run_pipeline(cfg: SearchConfig, dataset: MicroDataset, spec: CellSpec,
                 oracle: Evaluator | None = None, config_echo: dict | None = None) -> RunResult:
    """Supernet training, model selection, then retraining from scratch.

    With ``oracle`` set, the oracle replaces inherited accuracy both as the
    controller's reward and as the selection objective.
    """
    t0 = time.perf_counter()
    streams = make_streams(cfg.seed)
    w, archive, trace = train_supernet(cfg, dataset, spec, reward=oracle, streams=streams)
    t1 = time.perf_counter()
    evaluate = oracle if oracle is not None else supernet_evaluator(
        w, dataset.batches("val", cfg.batch_size))
    if cfg.selector == "random-search":
        sel = select_random(evaluate, spec, cfg.budget, streams.selection)
    else:
        sel = select_evolution(evaluate, spec, cfg.budget, streams.selection,
                               cfg.population_size, cfg.tournament_size, cfg.mutation_rate)
    t2 = time.perf_counter()
    _, test_acc = retrain(sel.genotype, cfg, dataset)
    t3 = time.perf_counter()
    trace.records.append({"epoch": cfg.epochs, "step": len(trace.records), "phase": "selected",
                          "loss": None, "diversity": trace.diversity[-1],
                          "best_val_acc": sel.accuracy})
    timing = {"train_s": t1 - t0, "select_s": t2 - t1, "retrain_s": t3 - t2,
              "total_s": t3 - t0}
    return RunResult(sel.genotype, float(sel.accuracy), float(test_acc), trace.diversity,
                     trace.epoch_loss, trace.best_val_acc, sel.best_curve,
                     copy.deepcopy(config_echo) if config_echo is not None else cfg.to_dict(), cfg.seed,
                     timing, trace.records, archive)
