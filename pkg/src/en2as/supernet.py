"""Desk-scale single-path weight-sharing supernet.

Network layout for a genotype ``g`` over ``spec``:

* stem: ``num_input_nodes`` affine projections ``s_i = x P_i^T + p_i``;
* cells, one per cell type in order.  A cell's input nodes are the last
  ``num_input_nodes`` states produced so far (stem projections first, then
  previous cell outputs).  Each edge slot computes ``op(W h_src + b)`` with its
  own block ``W, b``; an op node sums its slots and the cell output sums all
  op nodes;
* head: ``logits = h_out H^T + c`` followed by softmax cross-entropy.

There is one block per ``(cell_type, node, slot, source, op)`` with
``op != zero``, so the genotype alone determines which parameters are used.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .arch import CellSpec, Genotype

CHECKPOINT_VERSION = 1


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# name -> (forward(pre), derivative(pre, out))
ACTIVATIONS = {
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "sigmoid": (_sigmoid, lambda z, a: a * (1.0 - a)),
}
ZERO_OP = "zero"


class NonFiniteError(FloatingPointError):
    pass


BlockKey = tuple[int, int, int, int, int]  # (cell_type, node, slot, source, op)
# ("stem", i, "W"|"b"), ("block", BlockKey, "W"|"b") or ("head", None, "W"|"b")
ParamName = tuple


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


@dataclass
class SharedWeights:
    spec: CellSpec
    input_dim: int
    hidden_dim: int
    num_classes: int
    seed: int
    stem: list[tuple[np.ndarray, np.ndarray]]
    blocks: dict[BlockKey, tuple[np.ndarray, np.ndarray]]
    head: tuple[np.ndarray, np.ndarray]

    @classmethod
    def init(cls, spec: CellSpec, input_dim: int, hidden_dim: int, num_classes: int,
             seed: int, zero_head: bool = False) -> "SharedWeights":
        unknown = [op for op in spec.ops if op != ZERO_OP and op not in ACTIVATIONS]
        if unknown:
            raise ValueError(f"unsupported operations for the supernet: {unknown}")
        rng = np.random.default_rng(seed)
        stem = [(_glorot(rng, hidden_dim, input_dim), np.zeros(hidden_dim))
                for _ in range(spec.num_input_nodes)]
        blocks = {}
        for (cell, node, slot), n_src in zip(spec.slots, spec.source_counts):
            for src in range(int(n_src)):
                for op, name in enumerate(spec.ops):
                    if name == ZERO_OP:
                        continue
                    blocks[(cell, node, slot, src, op)] = (
                        _glorot(rng, hidden_dim, hidden_dim), np.zeros(hidden_dim))
        if zero_head:
            head = (np.zeros((num_classes, hidden_dim)), np.zeros(num_classes))
        else:
            head = (_glorot(rng, num_classes, hidden_dim), np.zeros(num_classes))
        return cls(spec, input_dim, hidden_dim, num_classes, seed, stem, blocks, head)

    def active_keys(self, g: Genotype) -> list[BlockKey]:
        _check_genotype(g, self.spec)
        return [(cell, node, slot, src, op)
                for (cell, node, slot), (src, op) in zip(self.spec.slots, g.edges)
                if self.spec.ops[op] != ZERO_OP]

    def copy(self) -> "SharedWeights":
        return SharedWeights(
            self.spec, self.input_dim, self.hidden_dim, self.num_classes, self.seed,
            [(W.copy(), b.copy()) for W, b in self.stem],
            {k: (W.copy(), b.copy()) for k, (W, b) in self.blocks.items()},
            (self.head[0].copy(), self.head[1].copy()))

    def arrays(self) -> dict[ParamName, np.ndarray]:
        """Every parameter array keyed by name (views, not copies)."""
        out = {}
        for i, (W, b) in enumerate(self.stem):
            out[("stem", i, "W")], out[("stem", i, "b")] = W, b
        for k, (W, b) in self.blocks.items():
            out[("block", k, "W")], out[("block", k, "b")] = W, b
        out[("head", None, "W")], out[("head", None, "b")] = self.head
        return out

    def param(self, name: ParamName) -> np.ndarray:
        kind, key, which = name
        if kind == "stem":
            pair = self.stem[key]
        elif kind == "block":
            pair = self.blocks[key]
        else:
            pair = self.head
        return pair[0] if which == "W" else pair[1]

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())


def _check_genotype(g: Genotype, spec: CellSpec):
    if g.spec != spec:
        raise ValueError("genotype belongs to a different cell spec")


@dataclass
class Trace:
    """Everything the backward pass needs, plus inspectable activations."""

    x: np.ndarray
    y: np.ndarray
    states: list[np.ndarray]
    # (key, source state index, target state index, pre-activation, output)
    edges: list[tuple[BlockKey, int, int, np.ndarray, np.ndarray]]
    # (cell output state index, op-node state indices)
    cell_sums: list[tuple[int, list[int]]]
    logits: np.ndarray
    probs: np.ndarray

    @property
    def cell_output(self) -> np.ndarray:
        return self.states[self.cell_sums[-1][0]]


@dataclass
class ForwardResult:
    loss: float
    accuracy: float
    trace: Trace


def forward(g: Genotype, w: SharedWeights, batch: tuple[np.ndarray, np.ndarray]) -> ForwardResult:
    spec = w.spec
    _check_genotype(g, spec)
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch must be a non-empty 2-D array")
    if x.shape[1] != w.input_dim:
        raise ValueError(f"input dimension {x.shape[1]} != supernet input_dim {w.input_dim}")
    if y.shape != (x.shape[0],):
        raise ValueError("labels must be a vector matching the batch size")

    states = [x @ P.T + p for P, p in w.stem]
    frontier = list(range(spec.num_input_nodes))
    edges = []
    cell_sums = []
    it = iter(zip(spec.slots, g.edges))
    zero = np.zeros((x.shape[0], w.hidden_dim))
    for cell in range(spec.num_cell_types):
        nodes = list(frontier)
        op_nodes = []
        for node in range(spec.num_op_nodes):
            target = len(states)
            acc = zero.copy()
            for _ in range(spec.inputs_per_node):
                (c, j, slot), (src, op) = next(it)
                name = spec.ops[op]
                if name == ZERO_OP:
                    continue
                key = (c, j, slot, src, op)
                W, b = w.blocks[key]
                pre = states[nodes[src]] @ W.T + b
                out = ACTIVATIONS[name][0](pre)
                acc += out
                edges.append((key, nodes[src], target, pre, out))
            states.append(acc)
            nodes.append(target)
            op_nodes.append(target)
        out_index = len(states)
        states.append(np.sum([states[i] for i in op_nodes], axis=0))
        cell_sums.append((out_index, op_nodes))
        frontier = frontier[1:] + [out_index]

    H, c = w.head
    logits = states[-1] @ H.T + c
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    probs = np.exp(log_probs)
    loss = float(-log_probs[np.arange(len(y)), y].mean())
    accuracy = float((np.argmax(logits, axis=1) == y).mean())
    trace = Trace(x, y, states, edges, cell_sums, logits, probs)
    return ForwardResult(loss, accuracy, trace)


def backward(trace: Trace, w: SharedWeights) -> dict[ParamName, np.ndarray]:
    """Gradients of the mean cross-entropy for every parameter on the path.

    Keys are parameter names as in :meth:`SharedWeights.arrays`.
    """
    n = trace.x.shape[0]
    dlogits = trace.probs.copy()
    dlogits[np.arange(n), trace.y] -= 1.0
    dlogits /= n
    H, _ = w.head
    grads = {("head", None, "W"): dlogits.T @ trace.states[-1],
             ("head", None, "b"): dlogits.sum(axis=0)}

    dstates: list[np.ndarray | None] = [None] * len(trace.states)

    def add(i, d):
        dstates[i] = d if dstates[i] is None else dstates[i] + d

    add(len(trace.states) - 1, dlogits @ H)
    # Every event writes a state with a larger index than the states it
    # reads, so sweeping events by descending output index is a valid
    # reverse topological order.
    events = [(e[2], 0, e) for e in trace.edges]
    events += [(out_index, 1, op_nodes) for out_index, op_nodes in trace.cell_sums]
    events.sort(key=lambda ev: (ev[0], ev[1]), reverse=True)
    for out_index, kind, payload in events:
        d_out = dstates[out_index]
        if d_out is None:
            continue
        if kind == 1:
            for i in payload:
                add(i, d_out)
            continue
        key, src, _, pre, out = payload
        W, _ = w.blocks[key]
        d_pre = d_out * ACTIVATIONS[w.spec.ops[key[4]]][1](pre, out)
        grads[("block", key, "W")] = d_pre.T @ trace.states[src]
        grads[("block", key, "b")] = d_pre.sum(axis=0)
        add(src, d_pre @ W)
    for i, (P, _) in enumerate(w.stem):
        d = dstates[i]
        if d is None:
            d = np.zeros((n, w.hidden_dim))
        grads[("stem", i, "W")] = d.T @ trace.x
        grads[("stem", i, "b")] = d.sum(axis=0)
    return grads


def loss_and_grads(g: Genotype, w: SharedWeights, batch) -> tuple[float, dict[ParamName, np.ndarray]]:
    res = forward(g, w, batch)
    return res.loss, backward(res.trace, w)


def train_step(g: Genotype, w: SharedWeights, batch, lr: float) -> float:
    """One SGD step on the parameters used by ``g``; returns the pre-step loss."""
    if not lr > 0:
        raise ValueError("lr must be > 0")
    loss, grads = loss_and_grads(g, w, batch)
    if not math.isfinite(loss):
        raise NonFiniteError(f"non-finite loss {loss} for genotype {g.edges}")
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient in {name} for genotype {g.edges}")
    for name, grad in grads.items():
        w.param(name)[...] -= lr * grad
    return loss


def inherited_accuracy(g: Genotype, w: SharedWeights,
                       val_batches: Sequence[tuple[np.ndarray, np.ndarray]]) -> float:
    """Mean per-batch top-1 accuracy of ``g`` using the supernet's weights."""
    if len(val_batches) == 0:
        raise ValueError("no validation batches")
    return float(np.mean([forward(g, w, b).accuracy for b in val_batches]))


def evaluate_loss(g: Genotype, w: SharedWeights, batches) -> float:
    return float(np.mean([forward(g, w, b).loss for b in batches]))


# -- datasets --------------------------------------------------------------


@dataclass
class MicroDataset:
    name: str
    seed: int
    num_classes: int
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    noise: float = 0.0
    sizes: tuple[int, int, int] = field(default=(0, 0, 0))

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return getattr(self, f"x_{name}"), getattr(self, f"y_{name}")

    def batches(self, split: str, batch_size: int,
                rng: np.random.Generator | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """Consecutive batches of a split, shuffled first when ``rng`` is given."""
        x, y = self.split(split)
        order = np.arange(len(y)) if rng is None else rng.permutation(len(y))
        return [(x[order[i:i + batch_size]], y[order[i:i + batch_size]])
                for i in range(0, len(y), batch_size)]


def _balanced_labels(n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(np.arange(n) % num_classes)


def _moons(y, noise, rng):
    # class 0: (cos t, sin t); class 1: (1 - cos t, 0.5 - sin t); t ~ U[0, pi]
    t = rng.uniform(0.0, np.pi, size=len(y))
    x = np.where((y == 0)[:, None],
                 np.stack([np.cos(t), np.sin(t)], axis=1),
                 np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1))
    return x + noise * rng.standard_normal(x.shape)


def _blobs(y, noise, rng, num_classes, radius=4.0):
    # centres evenly spaced on a circle; points uniform in a unit disc around
    # them plus isotropic Gaussian noise
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    centres = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    r = np.sqrt(rng.uniform(size=len(y)))
    phi = rng.uniform(0.0, 2 * np.pi, size=len(y))
    disc = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    return centres[y] + disc + noise * rng.standard_normal((len(y), 2))


def _xor_grid(y, noise, rng):
    # label 0 iff sign(x0) == sign(x1); each point is drawn uniformly from a
    # quadrant of [-1, 1]^2 consistent with its label, then jittered
    sx = rng.choice([-1.0, 1.0], size=len(y))
    sy = np.where(y == 0, sx, -sx)
    mag = rng.uniform(0.05, 1.0, size=(len(y), 2))
    x = mag * np.stack([sx, sy], axis=1)
    return x + noise * rng.standard_normal(x.shape)


DATASETS = ("moons", "blobs", "xor-grid")


def make_dataset(name: str, sizes: tuple[int, int, int] = (256, 128, 128), noise: float = 0.1,
                 seed: int = 0, num_classes: int = 2) -> MicroDataset:
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}")
    if any(s < 1 for s in sizes):
        raise ValueError("every split size must be >= 1")
    if name != "blobs" and num_classes != 2:
        raise ValueError(f"{name} is a two-class dataset")
    rng = np.random.default_rng(seed)
    total = sum(sizes)
    y = _balanced_labels(total, num_classes, rng)
    if name == "moons":
        x = _moons(y, noise, rng)
    elif name == "blobs":
        x = _blobs(y, noise, rng, num_classes)
    else:
        x = _xor_grid(y, noise, rng)
    a, b = sizes[0], sizes[0] + sizes[1]
    return MicroDataset(name, seed, num_classes, x[:a], y[:a], x[a:b], y[a:b], x[b:], y[b:],
                        noise=noise, sizes=tuple(sizes))


# -- checkpoints -----------------------------------------------------------


class CheckpointError(ValueError):
    pass


def _param_label(name: ParamName) -> str:
    kind, key, which = name
    if kind == "block":
        return "block_" + "_".join(map(str, key)) + "." + which
    if kind == "stem":
        return f"stem{key}.{which}"
    return f"head.{which}"


def save_weights(w: SharedWeights, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "spec": w.spec.to_dict(),
        "spec_hash": w.spec.fingerprint(),
        "input_dim": w.input_dim,
        "hidden_dim": w.hidden_dim,
        "num_classes": w.num_classes,
        "seed": w.seed,
    }
    buf = io.BytesIO()
    tensors = {_param_label(name): arr for name, arr in w.arrays().items()}
    np.savez(buf, __meta__=np.array(json.dumps(meta)), **tensors)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_weights(path, spec: CellSpec) -> SharedWeights:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
        if meta["spec_hash"] != spec.fingerprint():
            raise CheckpointError(f"checkpoint spec hash {meta['spec_hash']} does not match "
                                  f"{spec.fingerprint()}")
        w = SharedWeights.init(spec, meta["input_dim"], meta["hidden_dim"],
                               meta["num_classes"], meta["seed"])
        for name, arr in w.arrays().items():
            label = _param_label(name)
            if label not in data or data[label].shape != arr.shape:
                raise CheckpointError(f"missing or malformed tensor {label}")
            arr[...] = data[label]
    return w


def batches_of(x: np.ndarray, y: np.ndarray, size: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    for i in range(0, len(y), size):
        yield x[i:i + size], y[i:i + size]


def stack_batches(batches: Iterable[tuple[np.ndarray, np.ndarray]]) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = zip(*batches)
    return np.concatenate(xs), np.concatenate(ys)
