"""Independent reference values.

* :func:`brute_entry` integrates the Hankel kernel against the leaf basis
  by adaptive tensor Gauss-Legendre quadrature, cut at the target point.
* :func:`radial_reference` solves scattering of a plane wave by a radially
  symmetric contrast by separation of variables: one radial ODE per angular
  mode, matched to outgoing Hankel functions at the support radius.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special
from scipy.integrate import solve_ivp

from .interp import InterpOperator, basis_matrix
from .quadgen import adaptive_quad_2d
from .tree import QuadTree

logger = logging.getLogger(__name__)

__all__ = [
    "brute_unit_integrals",
    "brute_entry",
    "brute_potential",
    "RadialProblem",
    "radial_reference",
    "radial_mode_coefficients",
]


def brute_unit_integrals(spec, z: float, t, tol: float = 1e-13) -> np.ndarray:
    """``int_U H0(z |t - u|) b_l(u) du`` for one unit-box target ``t``."""
    t = np.asarray(t, dtype=float)

    def f(x, y):
        r = np.hypot(x - t[0], y - t[1])
        return special.hankel1(0, z * r)[..., None] * basis_matrix(spec, x, y)

    return adaptive_quad_2d(f, (-0.5, 0.5, -0.5, 0.5), tol=tol, singular_point=t)


def brute_entry(tree: QuadTree, interp: InterpOperator, kappa: float, i: int, j: int,
                tol: float = 1e-13) -> complex:
    """Entry ``V[i, j]`` by direct adaptive quadrature (independent of the tables)."""
    if tol < 1e-13:
        raise ValueError("tol below 1e-13 is not attainable in double precision")
    pp = interp.p ** 2
    la = tree.leaf_arrays()
    Ti, ji = divmod(int(i), pp)
    S, jl = divmod(int(j), pp)
    side = float(la["side"][S])
    x = la["center"][Ti] + la["side"][Ti] * interp.grid[ji]
    t = (x - la["center"][S]) / side
    I = brute_unit_integrals(interp.spec, kappa * side, t, tol)
    return complex(0.25j * side * side * (I @ interp.Qdag[:, jl]))


def brute_potential(tree: QuadTree, interp: InterpOperator, kappa: float, psi: np.ndarray,
                    target, tol: float = 1e-12) -> complex:
    """Volume potential of the piecewise-polynomial density at one point."""
    pp = interp.p ** 2
    la = tree.leaf_arrays()
    coef = np.asarray(psi).reshape(-1, pp) @ interp.Qdag.T
    total = 0j
    for m in range(len(la["side"])):
        side = float(la["side"][m])
        t = (np.asarray(target, dtype=float) - la["center"][m]) / side
        I = brute_unit_integrals(interp.spec, kappa * side, t, tol)
        total += 0.25j * side * side * (I @ coef[m])
    return complex(total)


# ---------------------------------------------------------------------------
# radially symmetric scattering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialProblem:
    """Plane-wave scattering by ``q(x) = q_r(|x|)``, supported in ``|x| <= R``."""

    q_r: Callable[[np.ndarray], np.ndarray]
    R: float
    kappa: float
    n_modes: int = 0

    def __post_init__(self):
        if self.R <= 0 or self.kappa <= 0:
            raise ValueError("R and kappa must be positive")
        need = int(math.ceil(self.kappa * self.R)) + 40
        if self.n_modes == 0:
            object.__setattr__(self, "n_modes", need)
        elif self.n_modes < need:
            raise ValueError(f"n_modes must be at least kappa*R + 40 = {need}")

    def q(self, x, y):
        return self.q_r(np.hypot(x, y))


def _regular_solution(problem: RadialProblem, n: int, radii: np.ndarray, rtol: float):
    """Regular solution ``w = r^n v`` of the mode equation, ``v(0) = 1``.

    Returns ``v`` at ``radii`` (all in ``(0, R]``) and ``w'/w`` at ``R``.
    """
    k2 = problem.kappa ** 2
    q0 = float(problem.q_r(np.array(0.0)))
    r0 = min(1e-5, 1e-5 / problem.kappa) * problem.R
    c1 = -k2 * (1 + q0) / (4 * (n + 1))
    v0, dv0 = 1.0 + c1 * r0 ** 2, 2 * c1 * r0

    def rhs(r, y):
        return [y[1], -(2 * n + 1) / r * y[1] - k2 * (1 + problem.q_r(r)) * y[0]]

    pts = np.unique(np.append(radii[(radii > r0)], problem.R))
    sol = solve_ivp(rhs, (r0, problem.R), [v0, dv0], method="DOP853", rtol=rtol,
                    atol=1e-300, t_eval=pts)
    if not sol.success:
        raise RuntimeError(f"radial integration failed for mode {n}: {sol.message}")
    v = np.interp(radii, pts, sol.y[0])  # radii are nodes of pts, so this is a lookup
    small = radii <= r0
    v[small] = 1.0 + c1 * radii[small] ** 2
    vR, dvR = sol.y[0][-1], sol.y[1][-1]
    lam = n / problem.R + dvR / vR
    return v, vR, lam


def radial_mode_coefficients(problem: RadialProblem, rtol: float = 1e-12) -> np.ndarray:
    """Outgoing coefficients ``alpha_n`` (``n >= 0``) of the scattered field."""
    return _solve_modes(problem, np.empty(0), rtol)[0]


def _solve_modes(problem, radii_in, rtol):
    k, R = problem.kappa, problem.R
    kR = k * R
    alphas = np.zeros(problem.n_modes + 1, dtype=complex)
    inner = np.zeros((problem.n_modes + 1, len(radii_in)), dtype=complex)
    for n in range(problem.n_modes + 1):
        v, vR, lam = _regular_solution(problem, n, radii_in, rtol)
        J, Jp = special.jv(n, kR), special.jvp(n, kR)
        H, Hp = special.hankel1(n, kR), special.h1vp(n, kR)
        den = k * Hp - lam * H
        if abs(den) <= 1e-12 * (k * abs(Hp) + abs(lam * H)):
            raise np.linalg.LinAlgError(f"mode {n}: matching system is ill-conditioned")
        alpha = (1j ** n) * (lam * J - k * Jp) / den
        alphas[n] = alpha
        if len(radii_in):
            # u_n(r) = u_n(R) * (r/R)^n * v(r)/v(R)
            uR = (1j ** n) * J + alpha * H
            with np.errstate(under="ignore"):
                inner[n] = uR * (radii_in / R) ** n * (v / vR)
    return alphas, inner


def radial_reference(problem: RadialProblem, targets, *, rtol: float = 1e-12,
                     scattered: bool = False) -> np.ndarray:
    """Total (or scattered) field at target points for incidence ``exp(i kappa x1)``."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    r = np.hypot(targets[:, 0], targets[:, 1])
    th = np.arctan2(targets[:, 1], targets[:, 0])
    inside = r <= problem.R
    alphas, inner = _solve_modes(problem, r[inside], rtol)
    k = problem.kappa
    u_inc = np.exp(1j * k * targets[:, 0])
    out = np.zeros(len(r), dtype=complex)
    ro = r[~inside]
    tho = th[~inside]
    scat_out = np.zeros(len(ro), dtype=complex)
    for n in range(problem.n_modes + 1):
        w = 1.0 if n == 0 else 2.0
        if len(ro):
            scat_out += w * alphas[n] * special.hankel1(n, k * ro) * np.cos(n * tho)
        if inside.any():
            out[inside] += w * inner[n] * np.cos(n * th[inside])
    out[~inside] = scat_out + u_inc[~inside]
    if scattered:
        return out - u_inc
    return out
