"""
Matrix entries in constant time
===============================

Every entry of the discretized operator is produced from a handful of
precomputed quantities: wavenumber-independent moment tables for touching
leaf pairs, and per-level multipole moments for everything else.  Here the
fast entries are compared with brute-force adaptive quadrature of the
Hankel kernel.
"""

# %%
import time

import numpy as np

from ls2d.driver import contrast
from ls2d.entries import EntryKind, block, build_context, pair_kinds, v_entry
from ls2d.oracle import brute_entry
from ls2d.tree import BoxGeom, TreeParams, build_tree

kappa = 20.0
q = contrast("gaussian")
tree = build_tree(BoxGeom((0.0, 0.0), 1.0), q, None, TreeParams(eps_data=1e-4, kappa=kappa))
ctx = build_context(tree, kappa, q)
print(f"N = {ctx.n}")

# %%
# One random pair of each geometric kind.
rng = np.random.default_rng(1)
I, J = rng.integers(0, ctx.n, (2, 20_000))
kinds = pair_kinds(ctx, I // ctx.pp, J // ctx.pp)
for kind in EntryKind:
    s = int(np.nonzero(kinds == kind)[0][0])
    fast = v_entry(ctx, int(I[s]), int(J[s]))
    slow = brute_entry(tree, ctx.interp, kappa, int(I[s]), int(J[s]))
    print(f"{kind.name:18s} |V| = {abs(slow):.3e}  relative difference {abs(fast - slow) / abs(slow):.1e}")

# %%
# Throughput of block extraction, the operation the direct solver relies on.
rows = rng.choice(ctx.n, 500, replace=False)
cols = rng.choice(ctx.n, 500, replace=False)
block(ctx, rows[:4], cols[:4])
t0 = time.perf_counter()
block(ctx, rows, cols)
print(f"{rows.size * cols.size / (time.perf_counter() - t0):.2e} entries per second")
