"""
A direct solver with compressed off-diagonal blocks
===================================================

Off-diagonal blocks of the system couple well separated groups of leaves and
are numerically low rank.  They are compressed by partially pivoted cross
approximation from individual entries, and the whole matrix is factored
recursively.  The result is compared with dense LU.
"""

# %%
import time

import numpy as np

from ls2d.entries import accessor, build_context
from ls2d.driver import contrast
from ls2d.hodlr import build_ordering, dense_solve, factor, sampled_residual, solve
from ls2d.tree import BoxGeom, build_uniform_tree

kappa = 40.0
tree = build_uniform_tree(BoxGeom((0.0, 0.0), 1.0), 4, kappa=kappa)
ctx = build_context(tree, kappa, contrast("gaussian"))
get = accessor(ctx)

t0 = time.perf_counter()
fac = factor(get, build_ordering(ctx.leaf_center, ctx.pp, 128), 1e-10)
psi = solve(fac, ctx.f)
t_h = time.perf_counter() - t0
print(f"HODLR: N = {fac.n}, max rank {fac.max_rank()}, "
      f"{fac.memory_bytes() / 2**20:.1f} MiB, {t_h:.1f} s")

# %%
t0 = time.perf_counter()
psi_d = dense_solve(get, ctx.n, ctx.f)
print(f"dense LU: {time.perf_counter() - t0:.1f} s, {ctx.n ** 2 * 16 / 2**20:.0f} MiB")
print(f"relative difference {np.linalg.norm(psi - psi_d) / np.linalg.norm(psi_d):.1e}")
print(f"sampled residual {sampled_residual(get, psi, ctx.f):.1e}")

# %%
# Ranks per level of the cluster tree.
for level in range(1, 5):
    print(f"  level {level}: max rank {fac.max_rank(level)}")
