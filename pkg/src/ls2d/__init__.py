"""Fast direct solver for the two-dimensional Lippmann-Schwinger equation.

The scattered field of a plane wave hitting a penetrable medium is written as
a volume potential whose density solves a second-kind integral equation.  The
equation is discretized by a Nystrom method on an adaptive, level-restricted
quad-tree; every matrix entry is available in constant time from precomputed
near-field tables and multipole moments, and the system is solved by a
hierarchical off-diagonal low-rank (HODLR) factorization.

Modules
-------
tree      adaptive quad-tree and neighbour classification
interp    leaf grids and the least-squares polynomial projector
specfun   Bessel/Hankel functions and small-argument Hankel series
quadgen   singular quadrature, near-field tables, far-field moments
entries   constant-time matrix entries and the volume potential
hodlr     HODLR compression, factorization and solve
oracle    brute-force quadrature and radially symmetric reference solutions
driver    problem registry, pipeline and convergence studies
"""

__version__ = "0.1.0"
