"""Novelty archive and the novelty-driven architecture update rules.

Novelty of a continuous architecture is the mean distance between its rounded
genotype and the ``k`` nearest rounded archive entries.  The archive members
are moved by an evolution-strategies estimate of the gradient of
Gaussian-smoothed novelty, optionally mixed with an accuracy reward.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .arch import (
    CellSpec,
    ContinuousArch,
    Genotype,
    GenotypeFormatError,
    edge_mismatches,
    mean_pairwise_distance,
    parse_genotype_lines,
    round_codes,
    serialize,
    spec_from_header,
)

Evaluator = Callable[[Genotype], float]


@dataclass(frozen=True)
class NoveltyConfig:
    k: int = 10
    n: int = 10
    sigma: float = 1.0
    gamma: float = 0.1
    w: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if not self.gamma >= 0:
            # gamma = 0 is accepted so the update can be checked as an identity.
            raise ValueError("gamma must be >= 0")
        if not 0.0 <= self.w <= 1.0:
            raise ValueError("w must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


class Archive:
    """Fixed-capacity store of continuous architectures.

    Rounded integer codes of all entries are cached so that novelty queries
    are a single vectorised comparison.
    """

    def __init__(self, spec: CellSpec, capacity: int = 100):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.spec = spec
        self.capacity = capacity
        self.entries: list[ContinuousArch] = []
        self._codes = np.zeros((capacity, spec.dim), dtype=np.int64)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i: int) -> ContinuousArch:
        return self.entries[i]

    @property
    def full(self) -> bool:
        return len(self.entries) >= self.capacity

    @property
    def codes(self) -> np.ndarray:
        """Rounded codes of the current entries, shape ``(len, dim)``."""
        return self._codes[: len(self.entries)]

    def _check(self, c: ContinuousArch):
        if c.spec != self.spec:
            raise ValueError("entry belongs to a different cell spec")

    def push(self, c: ContinuousArch) -> None:
        self._check(c)
        if self.full:
            raise IndexError(f"archive is full (capacity {self.capacity})")
        self._codes[len(self.entries)] = round_codes(c.values, self.spec)
        self.entries.append(c)

    def replace(self, m: int, c: ContinuousArch) -> None:
        self._check(c)
        if not self.entries:
            raise IndexError("replace on empty archive")
        if not 0 <= m < len(self.entries):
            raise IndexError(f"index {m} out of range for archive of length {len(self)}")
        self.entries[m] = c
        self._codes[m] = round_codes(c.values, self.spec)

    def sample(self, rng: np.random.Generator) -> tuple[ContinuousArch, int]:
        if not self.entries:
            raise IndexError("sample from empty archive")
        m = int(rng.integers(len(self.entries)))
        return self.entries[m], m

    def genotypes(self) -> list[Genotype]:
        return [Genotype.from_codes(self.spec, row) for row in self.codes]

    def diversity(self) -> float:
        """Mean pairwise distance of the rounded entries."""
        return mean_pairwise_distance(self.codes, self.spec)


def _knn_mean(query_codes: np.ndarray, archive: Archive, k: int) -> np.ndarray:
    """Novelty of a ``(q, dim)`` batch of rounded queries."""
    if len(archive) == 0:
        raise ValueError("novelty is undefined for an empty archive")
    k = min(k, len(archive))
    counts = edge_mismatches(query_codes[:, None, :], archive.codes[None, :, :])
    if k < counts.shape[1]:
        counts = np.partition(counts, k - 1, axis=1)[:, :k]
    # integer sums keep the result independent of neighbour order
    return counts.sum(axis=1) / (k * archive.spec.num_edges)


def novelty(c: ContinuousArch | np.ndarray, archive: Archive, k: int = 10) -> float:
    values = c.values if isinstance(c, ContinuousArch) else np.asarray(c, dtype=np.float64)
    codes = round_codes(values[None, :], archive.spec)
    return float(_knn_mean(codes, archive, k)[0])


def novelty_batch(values: np.ndarray, archive: Archive, k: int = 10) -> np.ndarray:
    """Novelty of each row of a ``(q, dim)`` array of continuous points."""
    return _knn_mean(round_codes(values, archive.spec), archive, k)


def _perturbations(m: ContinuousArch, cfg: NoveltyConfig, rng: np.random.Generator):
    eps = rng.standard_normal((cfg.n, m.values.shape[0]))
    return eps, m.values + cfg.sigma * eps


def novelty_gradient(m: ContinuousArch, archive: Archive, cfg: NoveltyConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """ES estimate of the gradient of expected novelty around ``m``."""
    eps, points = _perturbations(m, cfg, rng)
    scores = novelty_batch(points, archive, cfg.k)
    return scores @ eps / (cfg.n * cfg.sigma)


def update_novelty(m_index: int, archive: Archive, cfg: NoveltyConfig,
                   rng: np.random.Generator) -> ContinuousArch:
    """Return the novelty-ascended copy of archive entry ``m_index``.

    The archive itself is left untouched.
    """
    if not 0 <= m_index < len(archive):
        raise IndexError(f"index {m_index} out of range for archive of length {len(archive)}")
    m = archive[m_index]
    grad = novelty_gradient(m, archive, cfg, rng)
    return ContinuousArch(archive.spec, m.values + cfg.gamma * grad)


def update_combined(m_index: int, archive: Archive, cfg: NoveltyConfig,
                    evaluator: Evaluator, rng: np.random.Generator) -> ContinuousArch:
    """Like :func:`update_novelty` but the per-perturbation score is
    ``w * ACC + (1 - w) * novelty``; both terms share the perturbations.

    ``evaluator`` receives the rounded genotype of each perturbed point.  It is
    not called when ``w == 0``.
    """
    if not 0 <= m_index < len(archive):
        raise IndexError(f"index {m_index} out of range for archive of length {len(archive)}")
    spec = archive.spec
    m = archive[m_index]
    eps, points = _perturbations(m, cfg, rng)
    codes = round_codes(points, spec)
    scores = _knn_mean(codes, archive, cfg.k)
    if cfg.w > 0:
        acc = np.array([float(evaluator(Genotype.from_codes(spec, row))) for row in codes])
        scores = cfg.w * acc + (1.0 - cfg.w) * scores
    grad = scores @ eps / (cfg.n * cfg.sigma)
    return ContinuousArch(spec, m.values + cfg.gamma * grad)


# -- archive snapshot text format ------------------------------------------
#
#   archive <capacity> <count>
#   cellspec <a> <B> <ipn> <K> <types>
#   entry <index>
#   values <v_0> ... <v_{2E-1}>        (repr floats, exact round trip)
#   <E edge lines of the rounded genotype, as in the genotype format>
#   ...


def dump_archive(archive: Archive) -> str:
    lines = [f"archive {archive.capacity} {len(archive)}"]
    for i, (c, g) in enumerate(zip(archive.entries, archive.genotypes())):
        lines.append(f"entry {i}")
        lines.append("values " + " ".join(repr(float(v)) for v in c.values))
        lines.extend(serialize(g).rstrip("\n").split("\n")[1:])
    lines.insert(1, archive.spec.header())
    return "\n".join(lines) + "\n"


def load_archive(text: str, spec: CellSpec | None = None) -> Archive:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise GenotypeFormatError("archive text too short", 1)
    head = lines[0].split()
    if len(head) != 3 or head[0] != "archive":
        raise GenotypeFormatError("expected 'archive <capacity> <count>'", 1)
    try:
        capacity, count = int(head[1]), int(head[2])
    except ValueError:
        raise GenotypeFormatError("non-integer archive header", 1) from None
    if spec is None:
        spec = spec_from_header(lines[1].strip())
    elif lines[1].strip() != spec.header():
        raise GenotypeFormatError(f"header does not match spec {spec.header()!r}", 2)
    archive = Archive(spec, capacity)
    stride = 2 + spec.num_edges
    body = lines[2:]
    if len(body) != count * stride:
        raise GenotypeFormatError(f"expected {count * stride} entry lines, got {len(body)}",
                                  len(lines))
    for i in range(count):
        base = i * stride
        lineno = 3 + base
        if body[base].strip() != f"entry {i}":
            raise GenotypeFormatError(f"expected 'entry {i}'", lineno)
        parts = body[base + 1].split()
        if not parts or parts[0] != "values":
            raise GenotypeFormatError("expected 'values' line", lineno + 1)
        try:
            values = [float(p) for p in parts[1:]]
        except ValueError:
            raise GenotypeFormatError("non-numeric value", lineno + 1) from None
        try:
            c = ContinuousArch(spec, values)
        except ValueError as err:
            raise GenotypeFormatError(str(err), lineno + 1) from None
        g = parse_genotype_lines([lines[1]] + body[base + 2: base + stride], spec,
                                 first_lineno=lineno + 1)
        if not np.array_equal(g.codes, round_codes(c.values, spec)):
            raise GenotypeFormatError("edge lines do not match rounded values", lineno + 2)
        archive.push(c)
    return archive
