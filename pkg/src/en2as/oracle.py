"""Synthetic accuracy oracles and exhaustive tools for tiny search spaces."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .arch import CellSpec, Genotype, distance, random_genotype

DEFAULT_ENUMERATION_CAP = 10**6
MODES = ("hash-smooth", "deceptive")


class SpaceTooLargeError(ValueError):
    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(f"search space has {count} genotypes, above the cap of {cap}")


@dataclass(frozen=True)
class Basin:
    center: Genotype
    width: float
    peak: float

    def score(self, g: Genotype) -> float:
        return self.peak * math.exp(-(distance(g, self.center) / self.width) ** 2)


@dataclass(frozen=True)
class TabularOracle:
    """Pure, deterministic stand-in for inherited validation accuracy.

    ``hash-smooth``: every genotype gets a pseudo-random base value derived
    from ``(seed, genotype)``; the score is the mean base value over the
    genotype and all of its one-edge neighbours.

    ``deceptive``: the score is the maximum over basins of
    ``peak * exp(-(d / width)^2)``.  Basin 0 is the wide, low local peak and
    basin 1 the narrow, high global peak.
    """

    spec: CellSpec
    mode: str = "hash-smooth"
    seed: int = 0
    basins: tuple[Basin, ...] = field(default=())

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown oracle mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "deceptive" and not self.basins:
            raise ValueError("deceptive oracle needs at least one basin")
        for b in self.basins:
            if b.center.spec != self.spec:
                raise ValueError("basin centre belongs to a different cell spec")
            if not (b.width > 0 and 0.0 <= b.peak <= 1.0):
                raise ValueError("basin width must be > 0 and peak in [0, 1]")

    @classmethod
    def deceptive(cls, spec: CellSpec, seed: int = 0, local_peak: float = 0.6,
                  local_width: float = 0.8, global_peak: float = 0.95,
                  global_width: float = 0.4) -> "TabularOracle":
        """Local and global centres drawn from ``seed``; the global centre
        differs from the local one on every edge where the space allows it.
        """
        rng = np.random.default_rng(seed)
        local = random_genotype(spec, rng)
        edges = []
        for (src, op), n_src in zip(local.edges, spec.source_counts):
            new_op = (op + 1 + int(rng.integers(spec.num_ops - 1))) % spec.num_ops
            new_src = int(rng.integers(n_src))
            edges.append((new_src, new_op))
        far = Genotype(spec, tuple(edges))
        return cls(spec, "deceptive", seed,
                   (Basin(local, local_width, local_peak), Basin(far, global_width, global_peak)))

    @property
    def global_basin(self) -> Basin:
        return max(self.basins, key=lambda b: b.peak)

    def basin_index(self, g: Genotype) -> int:
        """Index of the basin whose term attains the score (first on ties)."""
        scores = [b.score(g) for b in self.basins]
        return int(np.argmax(scores))

    def in_global_basin(self, g: Genotype) -> bool:
        return self.basins[self.basin_index(g)] is self.global_basin

    def base_values(self, codes: np.ndarray) -> np.ndarray:
        """Pseudo-random base value in [0, 1) for each row of integer codes."""
        return _hash_unit(np.atleast_2d(codes), self.seed)

    def __call__(self, g: Genotype) -> float:
        return oracle_eval(self, g)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "mode": self.mode,
            "seed": self.seed,
            "basins": [{"center": [list(e) for e in b.center.edges], "width": b.width,
                        "peak": b.peak} for b in self.basins],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularOracle":
        spec = CellSpec.from_dict(d["spec"])
        basins = tuple(Basin(Genotype(spec, tuple(map(tuple, b["center"]))), b["width"], b["peak"])
                       for b in d.get("basins", []))
        return cls(spec, d["mode"], d["seed"], basins)


def one_edge_neighbours(g: Genotype) -> Iterator[Genotype]:
    """Genotypes that differ from ``g`` in exactly one edge's (source, op) pair."""
    spec = g.spec
    for i, n_src in enumerate(spec.source_counts):
        for pair in itertools.product(range(int(n_src)), range(spec.num_ops)):
            if pair != g.edges[i]:
                edges = list(g.edges)
                edges[i] = pair
                yield Genotype(spec, tuple(edges))


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _hash_unit(codes: np.ndarray, seed: int) -> np.ndarray:
    h = np.full(codes.shape[0], np.uint64(seed % 2**64), dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix(h)
        for col in codes.T.astype(np.uint64):
            h = _splitmix(h ^ col)
    return (h >> np.uint64(11)).astype(np.float64) / 2.0**53


def neighbour_codes(g: Genotype) -> np.ndarray:
    """Codes of every one-edge neighbour, one row each."""
    spec = g.spec
    base = g.codes
    rows = []
    for i, n_src in enumerate(spec.source_counts):
        pairs = np.array(list(itertools.product(range(int(n_src)), range(spec.num_ops))))
        pairs = pairs[(pairs[:, 0] != base[2 * i]) | (pairs[:, 1] != base[2 * i + 1])]
        block = np.repeat(base[None, :], len(pairs), axis=0)
        block[:, 2 * i: 2 * i + 2] = pairs
        rows.append(block)
    return np.concatenate(rows)


def oracle_eval(o: TabularOracle, g: Genotype) -> float:
    if g.spec != o.spec:
        raise ValueError("genotype belongs to a different cell spec than the oracle")
    if o.mode == "deceptive":
        return max(b.score(g) for b in o.basins)
    codes = np.concatenate([g.codes[None, :], neighbour_codes(g)])
    return float(o.base_values(codes).mean())


def space_size(spec: CellSpec) -> int:
    return spec.space_size


def enumerate_space(spec: CellSpec, cap: int = DEFAULT_ENUMERATION_CAP) -> Iterator[Genotype]:
    """Every legal genotype exactly once; the last edge varies fastest."""
    count = spec.space_size
    if count > cap:
        raise SpaceTooLargeError(count, cap)
    per_edge = [list(itertools.product(range(int(n)), range(spec.num_ops)))
                for n in spec.source_counts]
    for edges in itertools.product(*per_edge):
        yield Genotype(spec, edges)


def brute_force_argmax(spec: CellSpec, fn: Callable[[Genotype], float],
                       cap: int = DEFAULT_ENUMERATION_CAP) -> tuple[Genotype, float]:
    best, best_value = None, -math.inf
    for g in enumerate_space(spec, cap):
        v = fn(g)
        if v > best_value:
            best, best_value = g, v
    return best, best_value
