from fractions import Fraction

import numpy as np
import pytest

from en2as.arch import CellSpec, ContinuousArch, Genotype, distance, lift, random_genotype, round_arch
from en2as.novelty import (
    Archive,
    NoveltyConfig,
    dump_archive,
    load_archive,
    novelty,
    novelty_gradient,
    update_combined,
    update_novelty,
)

ONE_SLOT = CellSpec(1, 1, 1, ("zero", "identity", "tanh", "relu", "sigmoid"), 1)


def brute_knn(query, entries, k):
    # exact rational mean of the k smallest slot-wise distances
    q = round_arch(query)
    dists = sorted(Fraction(sum(a != b for a, b in zip(q.edges, round_arch(e).edges)),
                            q.spec.num_edges) for e in entries)
    k = min(k, len(dists))
    return float(sum(dists[:k]) / k)


def make_archive(spec, entries, capacity=None):
    a = Archive(spec, capacity or max(len(entries), 1))
    for e in entries:
        a.push(e if isinstance(e, ContinuousArch) else lift(e))
    return a


def test_config_validation():
    NoveltyConfig()
    for bad in ({"k": 0}, {"n": 0}, {"sigma": 0.0}, {"gamma": -0.1}, {"w": 1.5}):
        with pytest.raises(ValueError):
            NoveltyConfig(**bad)


def test_default_hyperparameters():
    cfg = NoveltyConfig()
    assert (cfg.k, cfg.n, cfg.sigma, cfg.gamma, cfg.w) == (10, 10, 1.0, 0.1, 0.5)
    assert Archive(ONE_SLOT).capacity == 100


def test_novelty_of_copies_is_zero():
    spec = CellSpec(1, 4, 1)
    g = random_genotype(spec, np.random.default_rng(0))
    archive = make_archive(spec, [g] * 10)
    assert novelty(lift(g), archive, k=10) == 0.0


def test_novelty_knn_example():
    spec = CellSpec(1, 4, 1)
    q = Genotype(spec, ((0, 0), (0, 0), (0, 0), (0, 0)))
    e1 = Genotype(spec, ((0, 1), (0, 0), (0, 0), (0, 0)))
    e2 = Genotype(spec, ((0, 1), (1, 0), (0, 0), (0, 0)))
    e3 = Genotype(spec, ((0, 1), (1, 0), (2, 0), (0, 0)))
    assert [distance(q, e) for e in (e1, e2, e3)] == [0.25, 0.5, 0.75]
    archive = make_archive(spec, [e3, e1, e2])
    assert novelty(lift(q), archive, k=2) == 0.375


def test_novelty_k_at_least_archive_is_full_mean():
    spec = CellSpec(2, 4, 2)
    rng = np.random.default_rng(1)
    gs = [random_genotype(spec, rng) for _ in range(7)]
    q = random_genotype(spec, rng)
    full = np.mean([distance(q, g) for g in gs])
    archive = make_archive(spec, gs)
    assert novelty(lift(q), archive, k=7) == pytest.approx(full, abs=1e-15)
    assert novelty(lift(q), archive, k=50) == pytest.approx(full, abs=1e-15)


def test_novelty_matches_brute_force():
    rng = np.random.default_rng(2)
    for trial in range(300):
        spec = [CellSpec(1, 4, 1), CellSpec(2, 4, 2), ONE_SLOT][trial % 3]
        size = int(rng.integers(1, 101))
        entries = [ContinuousArch(spec, rng.normal(1.5, 2.0, spec.dim)) for _ in range(size)]
        query = ContinuousArch(spec, rng.normal(1.5, 2.0, spec.dim))
        k = int(rng.integers(1, 15))
        archive = make_archive(spec, entries)
        assert novelty(query, archive, k) == brute_knn(query, entries, k)


def test_novelty_permutation_invariant():
    spec = CellSpec(2, 4, 2)
    rng = np.random.default_rng(3)
    gs = [random_genotype(spec, rng) for _ in range(30)]
    q = lift(random_genotype(spec, rng))
    a = novelty(q, make_archive(spec, gs), 5)
    perm = [gs[i] for i in rng.permutation(30)]
    assert novelty(q, make_archive(spec, perm), 5) == a


def test_novelty_zero_iff_neighbours_equal():
    spec = CellSpec(1, 4, 1)
    rng = np.random.default_rng(4)
    q = random_genotype(spec, rng)
    others = [random_genotype(spec, rng) for _ in range(5)]
    others = [o for o in others if o != q]
    archive = make_archive(spec, [q, q, q] + others)
    assert novelty(lift(q), archive, 3) == 0.0
    assert novelty(lift(q), archive, 4) > 0.0


def test_novelty_empty_archive():
    with pytest.raises(ValueError):
        novelty(lift(random_genotype(ONE_SLOT, np.random.default_rng(0))), Archive(ONE_SLOT), 3)


def constant_archive():
    # one entry per op value of {0, 1}; with k = 2 every query sees {0, 1}
    spec = CellSpec(1, 1, 1, ("zero", "identity"), 1)
    return spec, make_archive(spec, [Genotype(spec, ((0, 0),)), Genotype(spec, ((0, 1),))])


def test_gradient_deterministic():
    spec = CellSpec(1, 4, 1)
    rng = np.random.default_rng(5)
    archive = make_archive(spec, [random_genotype(spec, rng) for _ in range(20)])
    cfg = NoveltyConfig()
    a = novelty_gradient(archive[0], archive, cfg, np.random.default_rng(9))
    b = novelty_gradient(archive[0], archive, cfg, np.random.default_rng(9))
    assert np.array_equal(a, b)


def test_gradient_constant_novelty_recomputation():
    spec, archive = constant_archive()
    cfg = NoveltyConfig(k=2, n=10, sigma=1.0)
    grad = novelty_gradient(archive[0], archive, cfg, np.random.default_rng(12))
    eps = np.random.default_rng(12).standard_normal((10, 2))
    assert np.allclose(grad, 0.5 / 10 * eps.sum(axis=0), rtol=1e-13, atol=1e-15)


def test_update_gamma_zero_is_identity():
    spec = CellSpec(1, 4, 1)
    rng = np.random.default_rng(6)
    archive = make_archive(spec, [random_genotype(spec, rng) for _ in range(10)])
    cfg = NoveltyConfig(gamma=0.0)
    out = update_novelty(3, archive, cfg, rng)
    assert np.array_equal(out.values, archive[3].values)


def test_update_does_not_mutate_archive():
    spec = CellSpec(1, 4, 1)
    rng = np.random.default_rng(6)
    archive = make_archive(spec, [random_genotype(spec, rng) for _ in range(10)])
    before = [e.values.copy() for e in archive.entries]
    update_novelty(2, archive, NoveltyConfig(gamma=5.0), rng)
    assert all(np.array_equal(a, e.values) for a, e in zip(before, archive.entries))


def test_update_index_out_of_range():
    spec, archive = constant_archive()
    with pytest.raises(IndexError):
        update_novelty(2, archive, NoveltyConfig(), np.random.default_rng(0))
    with pytest.raises(IndexError):
        update_combined(-1, archive, NoveltyConfig(), lambda g: 0.5, np.random.default_rng(0))


def test_update_outputs_finite_and_bounded():
    spec = CellSpec(2, 4, 2)
    rng = np.random.default_rng(7)
    archive = make_archive(spec, [random_genotype(spec, rng) for _ in range(30)])
    cfg = NoveltyConfig(k=5, n=10, sigma=1.0, gamma=0.3)
    for _ in range(1000):
        m = int(rng.integers(30))
        seed = int(rng.integers(2**32))
        out = update_novelty(m, archive, cfg, np.random.default_rng(seed))
        assert out.values.shape == archive[m].values.shape
        assert np.all(np.isfinite(out.values))
        eps = np.random.default_rng(seed).standard_normal((cfg.n, spec.dim))
        # novelty lies in [0, 1], so each |sum_i N_i eps_i| <= sum_i |eps_i|
        bound = cfg.gamma * np.abs(eps).sum(axis=0) / (cfg.n * cfg.sigma)
        assert np.all(np.abs(out.values - archive[m].values) <= bound + 1e-12)
        archive.replace(m, out)


def test_update_constant_novelty_seeded_recomputation():
    spec, archive = constant_archive()
    cfg = NoveltyConfig(k=2, n=10, sigma=1.0, gamma=0.1)
    out = update_novelty(1, archive, cfg, np.random.default_rng(99))
    eps = np.random.default_rng(99).standard_normal((10, 2))
    expected = archive[1].values + 0.1 * 0.5 / 10 * eps.sum(axis=0)
    assert np.allclose(out.values, expected, rtol=1e-13, atol=1e-15)


def test_combined_w0_equals_novelty_update():
    spec = CellSpec(1, 4, 1)
    rng = np.random.default_rng(8)
    archive = make_archive(spec, [random_genotype(spec, rng) for _ in range(15)])
    cfg = NoveltyConfig(k=5, w=0.0, gamma=0.5)
    a = update_novelty(4, archive, cfg, np.random.default_rng(1))
    b = update_combined(4, archive, cfg, lambda g: 0.9, np.random.default_rng(1))
    assert np.array_equal(a.values, b.values)


def test_combined_w1_constant_acc_has_no_drift():
    spec, archive = constant_archive()
    cfg = NoveltyConfig(k=2, n=10, w=1.0, gamma=1.0)
    rng = np.random.default_rng(10)
    steps = np.array([update_combined(0, archive, cfg, lambda g: 0.7, rng).values
                      - archive[0].values for _ in range(4000)])
    se = steps.std(axis=0, ddof=1) / np.sqrt(len(steps))
    assert np.all(np.abs(steps.mean(axis=0)) < 3 * se)


def test_combined_hand_computed_three_perturbations():
    spec = ONE_SLOT
    archive = make_archive(spec, [Genotype(spec, ((0, 0),)), Genotype(spec, ((0, 0),)),
                                  Genotype(spec, ((0, 2),))])
    cfg = NoveltyConfig(k=2, n=3, sigma=1.0, gamma=0.1, w=0.5)
    acc_table = {0: 0.1, 1: 0.4, 2: 0.8, 3: 0.3, 4: 0.6}
    # k = 2 neighbours among ops {0, 0, 2}: distance is 0/1 per the single slot
    n_table = {0: 0.0, 1: 1.0, 2: 0.5, 3: 1.0, 4: 1.0}
    calls = []

    def acc(g):
        calls.append(g.edges[0][1])
        return acc_table[g.edges[0][1]]

    out = update_combined(2, archive, cfg, acc, np.random.default_rng(2024))
    eps = np.random.default_rng(2024).standard_normal((3, 2))
    m = archive[2].values
    total = np.zeros(2)
    ops = []
    for e in eps:
        op = int(min(max(np.floor(m[1] + e[1] + 0.5), 0), 4))
        ops.append(op)
        total += (0.5 * acc_table[op] + 0.5 * n_table[op]) * e
    assert calls == ops
    assert np.allclose(out.values, m + 0.1 / 3 * total, rtol=1e-13, atol=1e-15)


def test_combined_propagates_evaluator_error():
    spec, archive = constant_archive()

    def boom(g):
        raise RuntimeError("evaluation failed")

    with pytest.raises(RuntimeError, match="evaluation failed"):
        update_combined(0, archive, NoveltyConfig(k=2), boom, np.random.default_rng(0))


def test_archive_capacity_and_replace():
    spec = CellSpec(1, 4, 1)
    rng = np.random.default_rng(0)
    archive = Archive(spec, 5)
    for i in range(5):
        archive.push(lift(random_genotype(spec, rng)))
        assert len(archive) == i + 1
    assert archive.full
    with pytest.raises(IndexError):
        archive.push(lift(random_genotype(spec, rng)))
    c = lift(random_genotype(spec, rng))
    archive.replace(3, c)
    assert archive[3] == c
    assert np.array_equal(archive.codes[3], c.values.astype(int))
    assert len(archive) == 5


def test_archive_empty_errors():
    archive = Archive(ONE_SLOT, 3)
    with pytest.raises(IndexError):
        archive.sample(np.random.default_rng(0))
    with pytest.raises(IndexError):
        archive.replace(0, lift(Genotype(ONE_SLOT, ((0, 0),))))


def test_archive_rejects_foreign_spec():
    archive = Archive(ONE_SLOT, 3)
    with pytest.raises(ValueError):
        archive.push(lift(random_genotype(CellSpec(1, 4, 1), np.random.default_rng(0))))


def test_archive_sample_uniform():
    spec = CellSpec(1, 4, 1)
    rng = np.random.default_rng(0)
    archive = make_archive(spec, [random_genotype(spec, rng) for _ in range(10)])
    idx = []
    for _ in range(10_000):
        c, i = archive.sample(rng)
        assert c is archive[i]
        idx.append(i)
    freq = np.bincount(idx, minlength=10) / 10_000
    assert np.all(np.abs(freq - 0.1) <= 0.01)


def test_archive_dump_roundtrip():
    spec = CellSpec(2, 4, 2, num_cell_types=2)
    rng = np.random.default_rng(1)
    archive = Archive(spec, 12)
    for _ in range(7):
        archive.push(ContinuousArch(spec, rng.normal(1.0, 3.0, spec.dim)))
    text = dump_archive(archive)
    back = load_archive(text, spec)
    assert back.capacity == 12 and len(back) == 7
    assert all(a == b for a, b in zip(archive.entries, back.entries))
    assert load_archive(text).codes.tolist() == archive.codes.tolist()
    with pytest.raises(ValueError):
        load_archive(text.replace("entry 3", "entry 9"), spec)
