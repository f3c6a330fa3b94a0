"""Search spaces and architecture encodings.

A cell is a DAG with ``num_input_nodes`` input nodes followed by
``num_op_nodes`` operation nodes.  Each operation node owns
``inputs_per_node`` edge slots; every slot picks one strictly earlier node as
its source and one operation from ``ops``.  Edge slots are ordered
``(cell_type, node, slot)`` lexicographically and that order is used by every
flat representation in this package.

The continuous relaxation stores one real number per discrete decision, laid
out as ``[source_0, op_0, source_1, op_1, ...]``.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

MICRO_OPS = ("zero", "identity", "tanh", "relu", "sigmoid")


class GenotypeFormatError(ValueError):
    """Raised when genotype text cannot be parsed or fails validation."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class CellSpec:
    num_input_nodes: int = 1
    num_op_nodes: int = 4
    inputs_per_node: int = 1
    ops: tuple[str, ...] = MICRO_OPS
    num_cell_types: int = 1

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if self.num_input_nodes < 1:
            raise ValueError("num_input_nodes must be >= 1")
        if self.num_op_nodes < 1:
            raise ValueError("num_op_nodes must be >= 1")
        if self.inputs_per_node not in (1, 2):
            raise ValueError("inputs_per_node must be 1 or 2")
        if self.num_cell_types < 1:
            raise ValueError("num_cell_types must be >= 1")
        if len(self.ops) < 2:
            raise ValueError("at least two operations are required")
        if len(set(self.ops)) != len(self.ops):
            raise ValueError(f"duplicate operation names in {self.ops}")

    @property
    def num_ops(self) -> int:
        return len(self.ops)

    @property
    def num_edges(self) -> int:
        return self.num_cell_types * self.num_op_nodes * self.inputs_per_node

    @property
    def dim(self) -> int:
        """Length of the continuous encoding."""
        return 2 * self.num_edges

    @cached_property
    def slots(self) -> tuple[tuple[int, int, int], ...]:
        """``(cell_type, node, slot)`` for every edge, in canonical order."""
        return tuple(itertools.product(range(self.num_cell_types),
                                       range(self.num_op_nodes),
                                       range(self.inputs_per_node)))

    @cached_property
    def source_counts(self) -> np.ndarray:
        """Number of legal sources per edge slot."""
        return np.array([self.num_input_nodes + node for _, node, _ in self.slots],
                        dtype=np.int64)

    @cached_property
    def upper_bounds(self) -> np.ndarray:
        """Inclusive maximum of every continuous coordinate."""
        ub = np.empty(self.dim, dtype=np.int64)
        ub[0::2] = self.source_counts - 1
        ub[1::2] = self.num_ops - 1
        return ub

    @property
    def space_size(self) -> int:
        return int(np.prod([int(n) * self.num_ops for n in self.source_counts],
                           dtype=object))

    def header(self) -> str:
        return (f"cellspec {self.num_input_nodes} {self.num_op_nodes} "
                f"{self.inputs_per_node} {self.num_ops} {self.num_cell_types}")

    def fingerprint(self) -> str:
        """Stable hash of the space, including operation names."""
        text = self.header() + " " + ",".join(self.ops)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "num_input_nodes": self.num_input_nodes,
            "num_op_nodes": self.num_op_nodes,
            "inputs_per_node": self.inputs_per_node,
            "ops": list(self.ops),
            "num_cell_types": self.num_cell_types,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellSpec":
        return cls(d["num_input_nodes"], d["num_op_nodes"], d["inputs_per_node"],
                   tuple(d["ops"]), d["num_cell_types"])


@dataclass(frozen=True)
class Genotype:
    """A discrete architecture: one ``(source, op)`` pair per edge slot."""

    spec: CellSpec
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        edges = tuple((int(s), int(o)) for s, o in self.edges)
        object.__setattr__(self, "edges", edges)
        validate(self)

    @classmethod
    def from_codes(cls, spec: CellSpec, codes: Sequence[int]) -> "Genotype":
        """Build from a flat ``[source_0, op_0, ...]`` integer sequence."""
        codes = [int(c) for c in codes]
        return cls(spec, tuple(zip(codes[0::2], codes[1::2])))

    @property
    def codes(self) -> np.ndarray:
        return np.array([v for e in self.edges for v in e], dtype=np.int64)

    @property
    def cells(self) -> list[list[list[tuple[int, int]]]]:
        """Nested view: ``cells[cell_type][node][slot] -> (source, op)``."""
        spec = self.spec
        it = iter(self.edges)
        return [[[next(it) for _ in range(spec.inputs_per_node)]
                 for _ in range(spec.num_op_nodes)]
                for _ in range(spec.num_cell_types)]

    def stable_hash(self) -> int:
        digest = hashlib.sha256(serialize(self).encode()).digest()
        return int.from_bytes(digest[:8], "little")

    def describe(self) -> str:
        return pretty(self)


def validate(g: Genotype) -> None:
    spec = g.spec
    if len(g.edges) != spec.num_edges:
        raise ValueError(f"expected {spec.num_edges} edges, got {len(g.edges)}")
    for i, ((cell, node, slot), (src, op)) in enumerate(zip(spec.slots, g.edges)):
        if not 0 <= src < spec.num_input_nodes + node:
            raise ValueError(f"edge {i} (cell {cell}, node {node}, slot {slot}): "
                             f"source {src} out of range "
                             f"[0, {spec.num_input_nodes + node})")
        if not 0 <= op < spec.num_ops:
            raise ValueError(f"edge {i} (cell {cell}, node {node}, slot {slot}): "
                             f"op {op} out of range [0, {spec.num_ops})")


class ContinuousArch:
    """Real-valued relaxation of a genotype; immutable."""

    __slots__ = ("spec", "values")

    def __init__(self, spec: CellSpec, values):
        values = np.array(values, dtype=np.float64)
        if values.shape != (spec.dim,):
            raise ValueError(f"expected shape ({spec.dim},), got {values.shape}")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise ValueError(f"non-finite value at slot index {int(bad[0])}")
        values.setflags(write=False)
        self.spec = spec
        self.values = values

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, ContinuousArch):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"ContinuousArch({self.values.tolist()!r})"


def random_genotype(spec: CellSpec, rng: np.random.Generator) -> Genotype:
    sources = rng.integers(0, spec.source_counts)
    ops = rng.integers(0, spec.num_ops, size=spec.num_edges)
    return Genotype(spec, tuple(zip(sources.tolist(), ops.tolist())))


def lift(g: Genotype, spec: CellSpec | None = None) -> ContinuousArch:
    spec = _check_spec(g, spec)
    return ContinuousArch(spec, g.codes.astype(np.float64))


def round_codes(values: np.ndarray, spec: CellSpec) -> np.ndarray:
    """Vectorised rounding of ``(..., dim)`` arrays to legal integer codes.

    Halves round up, then each coordinate is clamped into its slot's range.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != spec.dim:
        raise ValueError(f"expected trailing dimension {spec.dim}, got {values.shape[-1]}")
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ValueError(f"non-finite value at slot index {int(bad[-1])}")
    codes = np.floor(values + 0.5).astype(np.int64)
    return np.clip(codes, 0, spec.upper_bounds)


def round_arch(c: ContinuousArch | np.ndarray, spec: CellSpec | None = None) -> Genotype:
    if isinstance(c, ContinuousArch):
        spec = spec or c.spec
        if c.spec != spec:
            raise ValueError("continuous architecture belongs to a different spec")
        values = c.values
    else:
        if spec is None:
            raise ValueError("spec is required when rounding a raw array")
        values = np.asarray(c, dtype=np.float64)
        if values.shape != (spec.dim,):
            raise ValueError(f"expected shape ({spec.dim},), got {values.shape}")
    return Genotype.from_codes(spec, round_codes(values, spec))


def edge_mismatches(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Count differing edge slots between broadcastable code arrays."""
    a = np.asarray(a)
    b = np.asarray(b)
    diff = a != b
    per_edge = diff[..., 0::2] | diff[..., 1::2]
    return per_edge.sum(axis=-1)


def distance(g1: Genotype, g2: Genotype, spec: CellSpec | None = None) -> float:
    """Fraction of edge slots whose (source, op) pairs differ."""
    spec = spec or g1.spec
    if g1.spec != spec or g2.spec != spec:
        raise ValueError("genotypes belong to different cell specs")
    differing = sum(e1 != e2 for e1, e2 in zip(g1.edges, g2.edges))
    return differing / spec.num_edges


def pairwise_distances(codes: np.ndarray, spec: CellSpec) -> np.ndarray:
    codes = np.asarray(codes)
    return edge_mismatches(codes[:, None, :], codes[None, :, :]) / spec.num_edges


def mean_pairwise_distance(codes: np.ndarray, spec: CellSpec) -> float:
    """Mean distance over unordered distinct pairs; 0.0 for fewer than two rows."""
    codes = np.asarray(codes)
    n = codes.shape[0]
    if n < 2:
        return 0.0
    d = pairwise_distances(codes, spec)
    return float(d[np.triu_indices(n, k=1)].mean())


def mutate(g: Genotype, rng: np.random.Generator) -> Genotype:
    """Resample one field (a slot's source or op) to a different legal value.

    Only fields with more than one legal value are candidates, so the child
    always differs from the parent in exactly one field.
    """
    spec = g.spec
    choices = [(i, 0) for i, n in enumerate(spec.source_counts) if n > 1]
    choices += [(i, 1) for i in range(spec.num_edges)]
    edge, field = choices[rng.integers(len(choices))]
    n_values = int(spec.source_counts[edge]) if field == 0 else spec.num_ops
    current = g.edges[edge][field]
    new = int(rng.integers(n_values - 1))
    if new >= current:
        new += 1
    edges = list(g.edges)
    pair = list(edges[edge])
    pair[field] = new
    edges[edge] = tuple(pair)
    return Genotype(spec, tuple(edges))


def serialize(g: Genotype) -> str:
    lines = [g.spec.header()]
    for (cell, node, slot), (src, op) in zip(g.spec.slots, g.edges):
        lines.append(f"{cell} {node} {slot} {src} {op}")
    return "\n".join(lines) + "\n"


def _parse_ints(line: str, count: int, lineno: int) -> list[int]:
    parts = line.split()
    if len(parts) != count:
        raise GenotypeFormatError(f"expected {count} integers, got {len(parts)}", lineno)
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise GenotypeFormatError(f"non-integer field in {line!r}", lineno) from None


def parse_header(line: str, lineno: int = 1) -> tuple[int, int, int, int, int]:
    if not line.startswith("cellspec"):
        raise GenotypeFormatError("expected 'cellspec' header", lineno)
    return tuple(_parse_ints(line[len("cellspec"):], 5, lineno))


def spec_from_header(line: str, ops: Sequence[str] | None = None) -> CellSpec:
    """Rebuild a spec from a header line; op names default to ``op0..opK-1``."""
    a, b, ipn, k, nct = parse_header(line)
    if ops is None:
        ops = MICRO_OPS if k == len(MICRO_OPS) else tuple(f"op{i}" for i in range(k))
    if len(ops) != k:
        raise ValueError(f"header declares {k} ops, got {len(ops)} names")
    return CellSpec(a, b, ipn, tuple(ops), nct)


def parse_genotype_lines(lines: Sequence[str], spec: CellSpec, first_lineno: int = 1) -> Genotype:
    """Parse a header plus edge lines; ``first_lineno`` numbers the header."""
    if not lines or not lines[0].strip():
        raise GenotypeFormatError("empty genotype text", first_lineno)
    header = parse_header(lines[0].strip(), first_lineno)
    expected = (spec.num_input_nodes, spec.num_op_nodes, spec.inputs_per_node,
                spec.num_ops, spec.num_cell_types)
    if header != expected:
        raise GenotypeFormatError(f"header {header} does not match spec {expected}",
                                  first_lineno)
    body = lines[1:]
    if len(body) != spec.num_edges:
        raise GenotypeFormatError(f"expected {spec.num_edges} edge lines, got {len(body)}",
                                  first_lineno + len(body))
    edges = []
    for i, (line, slot_id) in enumerate(zip(body, spec.slots)):
        lineno = first_lineno + 1 + i
        cell, node, slot, src, op = _parse_ints(line, 5, lineno)
        if (cell, node, slot) != slot_id:
            raise GenotypeFormatError(f"expected slot {slot_id}, got {(cell, node, slot)}",
                                      lineno)
        if not 0 <= src < spec.num_input_nodes + node:
            raise GenotypeFormatError(f"source {src} out of range for node {node}", lineno)
        if not 0 <= op < spec.num_ops:
            raise GenotypeFormatError(f"op {op} out of range [0, {spec.num_ops})", lineno)
        edges.append((src, op))
    return Genotype(spec, tuple(edges))


def deserialize(text: str, spec: CellSpec) -> Genotype:
    if "\r" in text:
        raise GenotypeFormatError("carriage return found; lines must be LF-terminated")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise GenotypeFormatError("empty genotype text", 1)
    return parse_genotype_lines(lines, spec)


def pretty(g: Genotype) -> str:
    spec = g.spec
    out = []
    for c, cell in enumerate(g.cells):
        out.append(f"cell {c}:")
        for j, node in enumerate(cell):
            name = spec.num_input_nodes + j
            ins = ", ".join(f"{spec.ops[op]}(n{src})" for src, op in node)
            out.append(f"  n{name} = {ins}")
    return "\n".join(out)


def _check_spec(g: Genotype, spec: CellSpec | None) -> CellSpec:
    if spec is not None and g.spec != spec:
        raise ValueError("genotype belongs to a different cell spec")
    return g.spec
