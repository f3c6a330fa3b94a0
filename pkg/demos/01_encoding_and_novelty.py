"""Genotypes, their continuous lift, and the novelty signal that moves them.

Run with ``python demos/01_encoding_and_novelty.py``.
"""

# %% A small cell: one input node, four operation nodes, one input each.
import numpy as np

from en2as import (Archive, CellSpec, NoveltyConfig, distance, lift, novelty, pretty,
                   random_genotype, round_arch, serialize, update_novelty)

spec = CellSpec(num_input_nodes=1, num_op_nodes=4, inputs_per_node=1)
rng = np.random.default_rng(0)
g = random_genotype(spec, rng)
print(pretty(g))
print(serialize(g))

# %% Each edge is a (source, op) pair.  Lifting lays the pairs out as floats;
# rounding (half up, then clipped to the legal range) brings them back.
c = lift(g)
print("lifted:", c.values)
nudged = c.values + rng.normal(0, 0.3, c.values.shape)
print("nudged rounds to the same genotype:", round_arch(nudged, spec) == g)

# %% Distance counts differing edges, so it moves in steps of 1/E.
h = random_genotype(spec, rng)
print(f"d(g, h) = {distance(g, h)}  (E = {spec.num_edges})")

# %% Novelty is the mean distance to the k closest archive members.
archive = Archive(spec, capacity=20)
for _ in range(20):
    archive.push(lift(random_genotype(spec, rng)))
print(f"novelty of g against a random archive: {novelty(lift(g), archive, k=5):.3f}")
print(f"archive diversity: {archive.diversity():.3f}")

# %% One evolution-strategies step pushes a member away from its neighbours.
# A large step size makes the effect visible within a few hundred updates.
cfg = NoveltyConfig(k=5, n=10, sigma=1.0, gamma=0.5)
for step in range(300):
    _, m = archive.sample(rng)
    archive.replace(m, update_novelty(m, archive, cfg, rng))
    if step % 100 == 99:
        print(f"after {step + 1:3d} updates: diversity {archive.diversity():.3f}")
