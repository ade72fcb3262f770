"""
Adaptive quad-trees for a peaked contrast
=========================================

A Gaussian contrast concentrated near the origin needs small boxes there and
large boxes elsewhere.  The tree below is refined until the contrast and the
right-hand side are resolved by order-4 Chebyshev interpolation, boxes are
small enough for the wavelength, and touching leaves differ by at most one
level.
"""

# %%
import numpy as np

from ls2d.driver import contrast
from ls2d.tree import (BoxGeom, TreeParams, build_tree, classify_neighbors,
                       is_level_restricted)

q = contrast("gaussian")
params = TreeParams(p=4, M_ppw=1.0, eps_data=1e-6, kappa=40.0)
tree = build_tree(BoxGeom((0.0, 0.0), 4.0), q, None, params)

print(f"{tree.n_leaves} leaves, {tree.n_points} unknowns, deepest level {tree.max_level}")
print("level-restricted:", is_level_restricted(tree))

# %%
# Leaves per level: the wavelength rule fixes the coarsest level everywhere,
# the data rule adds levels near the peak.
levels = tree.leaf_arrays()["level"]
for lev, count in zip(*np.unique(levels, return_counts=True)):
    print(f"  level {lev}: {count:5d} leaves, side {tree.side(lev):.4f}")

# %%
# Neighbour lists of the leaf that contains the origin: colleagues share its
# level, coarse and fine neighbours are one level away, and separated-fine
# boxes are children of colleagues that do not touch it.
la = tree.leaf_arrays()
centre_leaf = tree.leaves[int(np.argmin(np.hypot(*la["center"].T)))]
nb = classify_neighbors(tree, centre_leaf)
print({name: len(getattr(nb, name)) for name in
       ("colleagues", "coarse", "fine", "separated_fine")})

# %%
# ``tree.dump()`` gives one line per node for external plotting.
print(tree.dump().splitlines()[:3])
