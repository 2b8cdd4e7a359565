"""
Modularity under conjugation
============================

Legendre transforms on a grid swap sub- and supermodularity, and in two
dimensions the convex envelope keeps the class.  In three dimensions the
envelope can lose it.
"""

# %%
import numpy as np

from vmot.modularity import (
    check_modularity,
    conjugate_modularity_suite,
    convex_envelope,
    legendre,
    random_submodular,
    slope_axes,
    verify_cube_counterexample,
)

rng = np.random.default_rng(3)

# %%
f = random_submodular(2, rng)
g = legendre(f, slope_axes(f))
print("f:", check_modularity(f))
print("conjugate:", check_modularity(g))
print("envelope:", check_modularity(convex_envelope(f)))

# %% [markdown]
# The randomized suite.

# %%
rep = conjugate_modularity_suite(seed=0, trials=100)
print(rep.sub_to_super, rep.super_to_sub_d2, rep.envelope_preserved_d2, len(rep.counterexamples))

# %% [markdown]
# A submodular function on the 2x2x3 lattice whose convex envelope
# violates the submodular inequality at two interior points.

# %%
cube = verify_cube_counterexample()
print("submodular on the lattice:", cube.submodular)
print("envelope values:", cube.envelope_at)
print(f"env(u) + env(u') = {cube.lhs:.4f} < {cube.rhs:.4f} = env(u v u') + env(u ^ u')")
