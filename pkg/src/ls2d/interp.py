"""Leaf grids and polynomial bases on the unit box ``[-1/2, 1/2]^2``.

A leaf carries ``p x p`` samples of the density.  The density is represented
by ``N_p = p(p+1)/2`` basis polynomials of total degree ``< p``; the map from
samples to coefficients is the pseudoinverse of the sampling matrix ``Q``.
Every function of this module works in scaled (unit-box) coordinates, so a
single :class:`InterpOperator` serves all leaves of a tree regardless of level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import chebyshev as npcheb

__all__ = [
    "BasisSpec",
    "InterpOperator",
    "basis_exponents",
    "basis_eval",
    "basis_matrix",
    "grid_1d",
    "unit_grid",
    "build_interp",
    "chebyshev_nodes",
    "tensor_cheb_interp",
]


@dataclass(frozen=True)
class BasisSpec:
    """Basis family for order ``p``: monomials for ``p = 4``, Chebyshev otherwise."""

    p: int
    kind: str = ""

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if not self.kind:
            object.__setattr__(self, "kind", "monomial" if self.p == 4 else "chebyshev")
        if self.kind not in ("monomial", "chebyshev"):
            raise ValueError(f"unknown basis kind {self.kind!r}")

    @property
    def n_basis(self) -> int:
        return self.p * (self.p + 1) // 2

    @property
    def grid_kind(self) -> str:
        return "uniform" if self.p == 4 else "chebyshev"


@lru_cache(maxsize=None)
def basis_exponents(p: int) -> tuple[tuple[int, int], ...]:
    """Exponent pairs ``(a, b)`` with ``a + b < p`` in graded-lex order.

    Sorted by total degree, then by ``a``; index 0 is the constant.
    """
    return tuple((a, d - a) for d in range(p) for a in range(d + 1))


@lru_cache(maxsize=None)
def _monomial_coefficients(p: int, kind: str) -> np.ndarray:
    """Coefficients ``C[l, a, b]`` such that ``b_l(x, y) = sum C[l,a,b] x^a y^b``."""
    exps = basis_exponents(p)
    out = np.zeros((len(exps), p, p))
    if kind == "monomial":
        for l, (a, b) in enumerate(exps):
            out[l, a, b] = 1.0
        return out
    # T_a(2 x) expanded in powers of x
    one_d = []
    for a in range(p):
        c = npcheb.cheb2poly(np.eye(p)[a])
        c = np.pad(c, (0, p - len(c)))
        one_d.append(c * 2.0 ** np.arange(p))
    for l, (a, b) in enumerate(exps):
        out[l] = np.outer(one_d[a], one_d[b])
    out.setflags(write=False)
    return out


def monomial_coefficients(spec: BasisSpec) -> np.ndarray:
    return _monomial_coefficients(spec.p, spec.kind)


def basis_matrix(spec: BasisSpec, xi1, xi2) -> np.ndarray:
    """Evaluate all basis functions; returns shape ``xi1.shape + (N_p,)``."""
    xi1 = np.asarray(xi1, dtype=float)
    xi2 = np.asarray(xi2, dtype=float)
    exps = basis_exponents(spec.p)
    if spec.kind == "monomial":
        pw1 = xi1[..., None] ** np.arange(spec.p)
        pw2 = xi2[..., None] ** np.arange(spec.p)
    else:
        pw1 = npcheb.chebvander(2.0 * xi1, spec.p - 1)
        pw2 = npcheb.chebvander(2.0 * xi2, spec.p - 1)
    a = np.array([e[0] for e in exps])
    b = np.array([e[1] for e in exps])
    return pw1[..., a] * pw2[..., b]


def basis_eval(spec: BasisSpec, l: int, xi1: float, xi2: float) -> float:
    """Value of basis function ``l`` (0-based, graded-lex) at a unit-box point."""
    if not 0 <= l < spec.n_basis:
        raise IndexError(f"basis index {l} out of range for N_p={spec.n_basis}")
    return float(basis_matrix(spec, xi1, xi2).reshape(-1, spec.n_basis)[0, l])


def chebyshev_nodes(p: int) -> np.ndarray:
    """First-kind Chebyshev nodes on ``[-1/2, 1/2]``, ascending."""
    k = np.arange(p)
    return np.sort(0.5 * np.cos((2 * k + 1) * np.pi / (2 * p)))


def grid_1d(p: int) -> np.ndarray:
    """One-dimensional leaf nodes on ``[-1/2, 1/2]``.

    ``p = 4`` uses cell-centred uniform points ``(k + 1/2)/p - 1/2``; higher
    orders use first-kind Chebyshev nodes.  No node lies on the box boundary.
    """
    if p == 4:
        return (np.arange(p) + 0.5) / p - 0.5
    return chebyshev_nodes(p)


def unit_grid(p: int) -> np.ndarray:
    """Leaf grid points in the unit box, shape ``(p*p, 2)``.

    Point ``j = i2 * p + i1`` has coordinates ``(g[i1], g[i2])``: the first
    coordinate varies fastest.
    """
    g = grid_1d(p)
    x1, x2 = np.meshgrid(g, g, indexing="xy")
    return np.column_stack([x1.ravel(), x2.ravel()])


@dataclass(frozen=True)
class InterpOperator:
    spec: BasisSpec
    grid: np.ndarray
    Q: np.ndarray
    Qdag: np.ndarray
    sigma_min: float
    sigma_max: float = field(default=1.0)

    @property
    def p(self) -> int:
        return self.spec.p

    @property
    def n_basis(self) -> int:
        return self.spec.n_basis

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """Least-squares basis coefficients of leaf samples (last axis = ``p^2``)."""
        return np.asarray(values) @ self.Qdag.T


def build_interp(spec: BasisSpec, grid: np.ndarray | None = None) -> InterpOperator:
    """Sampling matrix ``Q`` and its SVD pseudoinverse for a leaf grid."""
    if grid is None:
        grid = unit_grid(spec.p)
    grid = np.asarray(grid, dtype=float)
    Q = basis_matrix(spec, grid[:, 0], grid[:, 1])
    u, s, vt = np.linalg.svd(Q, full_matrices=False)
    if s[-1] < 1e-10 * s[0]:
        raise np.linalg.LinAlgError(
            f"sampling matrix is rank deficient (sigma_min/sigma_max={s[-1] / s[0]:.3e})"
        )
    keep = s > 1e-12 * s[0]
    Qdag = (vt[keep].T / s[keep]) @ u[:, keep].T
    for arr in (grid, Q, Qdag):
        arr.setflags(write=False)
    return InterpOperator(spec=spec, grid=grid, Q=Q, Qdag=Qdag,
                          sigma_min=float(s[keep][-1]), sigma_max=float(s[0]))


def tensor_cheb_interp(values: np.ndarray, p: int, x1, x2) -> np.ndarray:
    """Evaluate the tensor Chebyshev interpolant of samples at Chebyshev nodes.

    ``values`` are given on :func:`chebyshev_nodes` in the ``unit_grid``
    ordering (first coordinate fastest); evaluation points are in unit-box
    coordinates.
    """
    nodes = 2.0 * chebyshev_nodes(p)
    V = npcheb.chebvander(nodes, p - 1)
    coef = np.linalg.solve(V, np.linalg.solve(V, values.reshape(p, p)).T).T
    # coef[k2, k1]: rows follow the second coordinate
    A1 = npcheb.chebvander(2.0 * np.asarray(x1), p - 1)
    A2 = npcheb.chebvander(2.0 * np.asarray(x2), p - 1)
    return np.einsum("...i,...j,ji->...", A1, A2, coef)
