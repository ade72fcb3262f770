"""Quadrature engine, near-field moment tables and far-field moments.

Everything here is dimensionless: source boxes are the unit box
``U = [-1/2, 1/2]^2`` (or one of its dyadic sub-boxes) and targets are given
in units of the source side, relative to the source centre.  The physical
entry for a box of side ``L`` is ``(i L^2 / 4)`` times the unit-box integral
``I_l(t) = int_U H0(z |t - y|) b_l(y) dy`` with ``z = kappa * L``.

Near-field moments ``int_S (r/2)^{2m} [log(r/2)] b_l`` do not depend on the
wavenumber and are tabulated once.  They are computed by splitting the box
into triangles with apex at the target: the radial integral is done in closed
form and the remaining integral along each edge by composite Gauss-Legendre
quadrature graded toward the foot of the perpendicular.

The truncated log-power series of ``H0`` loses accuracy once ``z r`` exceeds
roughly 9, so evaluation of ``I_l`` is zoned by the max-norm distance ``d`` of
the target from the (sub-)box centre, in units of the (sub-)box side:

* ``d >= 1.5``: multipole expansion of the box,
* ``1 <= d < 1.5``: multipole expansions of its four children,
* ``d < 1`` and ``z <= 4``: tabulated series,
* ``d < 1`` and ``z > 4``: recurse into the four children.
"""

from __future__ import annotations

import hashlib
import io
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .interp import BasisSpec, InterpOperator, basis_matrix, monomial_coefficients, unit_grid
from .specfun import HankelSeriesCoeffs, hankel1_sequence, series_coeffs
from .tree import COARSE_SLOTS, FINE_SLOTS

logger = logging.getLogger(__name__)

__all__ = [
    "QuadratureError",
    "adaptive_quad_2d",
    "box_moments",
    "NearFieldTable",
    "table_targets",
    "build_near_table",
    "near_integrals",
    "near_entry",
    "FarFieldMoments",
    "build_far_moments",
    "write_table",
    "read_table",
    "load_or_build_table",
    "SERIES_ZONE",
    "CHILD_ZONE",
    "SPLIT_Z",
]

SERIES_ZONE = 1.0   # series only for targets with max-norm distance < 1 box side
CHILD_ZONE = 1.5    # box multipole valid from 1.5 box sides
SPLIT_Z = 4.0       # series used only for boxes with kappa * side <= 4
RELATIONS = ("colleague", "coarse", "fine")
CHILD_CENTERS = np.array([[-0.25, -0.25], [0.25, -0.25], [0.25, 0.25], [-0.25, 0.25]])


class QuadratureError(RuntimeError):
    """Adaptive quadrature could not reach the requested tolerance."""


# ---------------------------------------------------------------------------
# generic adaptive 2D quadrature
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _gl(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = leggauss(n)
    return x, w


@lru_cache(maxsize=None)
def _gl_ext(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule in extended precision (Newton-polished ``leggauss``)."""
    x = leggauss(n)[0].astype(np.longdouble)
    for _ in range(3):
        p0, p1 = np.ones_like(x), x.copy()
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = n * (x * p1 - p0) / (x * x - 1)
        x = x - p1 / dp
    p0, p1 = np.ones_like(x), x.copy()
    for k in range(2, n + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = n * (x * p1 - p0) / (x * x - 1)
    return x, 2 / ((1 - x * x) * dp * dp)


def _tensor_rule(panels: np.ndarray, n: int):
    """Nodes and weights for a batch of rectangles ``(x0, x1, y0, y1)``."""
    x, w = _gl(n)
    cx = 0.5 * (panels[:, 0] + panels[:, 1])
    hx = 0.5 * (panels[:, 1] - panels[:, 0])
    cy = 0.5 * (panels[:, 2] + panels[:, 3])
    hy = 0.5 * (panels[:, 3] - panels[:, 2])
    X = cx[:, None, None] + hx[:, None, None] * x[None, :, None]
    Y = cy[:, None, None] + hy[:, None, None] * x[None, None, :]
    X = np.broadcast_to(X, (len(panels), n, n))
    W = (hx * hy)[:, None, None] * w[None, :, None] * w[None, None, :]
    return X, Y, W


def _quarter(panels: np.ndarray) -> np.ndarray:
    x0, x1, y0, y1 = panels.T
    xm, ym = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    return np.stack([np.column_stack(c) for c in (
        (x0, xm, y0, ym), (xm, x1, y0, ym), (xm, x1, ym, y1), (x0, xm, ym, y1))], axis=1)


def adaptive_quad_2d(f, box, tol: float = 1e-13, singular_point=None, order: int = 10,
                     max_panels: int = 10 ** 6):
    """Integrate ``f(x, y)`` over the rectangle ``box = (x0, x1, y0, y1)``.

    ``f`` receives arrays of equal shape and returns values of that shape,
    optionally with trailing vector axes.  When ``singular_point`` lies in the
    closed box the rectangle is first cut there so the singularity sits at
    panel corners.  Panels are refined until the summed error estimate
    (tensor Gauss-Legendre rule against the same rule on the four quarters)
    is below ``tol * max(1, |I|)``.
    """
    x0, x1, y0, y1 = map(float, box)
    rects = [(x0, x1, y0, y1)]
    if singular_point is not None:
        sx, sy = map(float, singular_point)
        if x0 <= sx <= x1 and y0 <= sy <= y1:
            xs = [v for v in (x0, sx, x1)]
            ys = [v for v in (y0, sy, y1)]
            rects = [(xs[i], xs[i + 1], ys[j], ys[j + 1]) for i in range(2) for j in range(2)
                     if xs[i + 1] > xs[i] and ys[j + 1] > ys[j]]
    panels = np.array(rects, dtype=float)

    def rule(pn):
        X, Y, W = _tensor_rule(pn, order)
        vals = np.asarray(f(X, Y))
        extra = vals.ndim - 3
        Wb = W.reshape(W.shape + (1,) * extra)
        return (vals * Wb).sum(axis=(1, 2))

    coarse = rule(panels)
    shape = coarse.shape[1:]
    acc = np.zeros(shape, dtype=coarse.dtype)
    budget = None
    used = len(panels)
    while True:
        kids = _quarter(panels).reshape(-1, 4)
        fk = rule(kids).reshape((len(panels), 4) + shape)
        fine = fk.sum(axis=1)
        err = np.abs(fine - coarse).reshape(len(panels), -1).max(axis=1)
        if budget is None:
            budget = tol * max(1.0, float(np.max(np.abs(fine.sum(axis=0)))))
        if err.sum() <= budget:
            return acc + fine.sum(axis=0)
        # accept panels whose error is small against the remaining budget
        bad = err > budget / (2.0 * len(panels))
        acc = acc + fine[~bad].sum(axis=0)
        budget -= err[~bad].sum()
        used += 4 * int(bad.sum())
        if used > max_panels:
            raise QuadratureError(
                f"adaptive_quad_2d exceeded {max_panels} panels with error estimate "
                f"{err[bad].sum():.3e} left")
        panels = kids[np.repeat(bad, 4)]
        coarse = fk[bad].reshape((-1,) + shape)


# ---------------------------------------------------------------------------
# kappa-independent moments by radial integration in closed form
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def _exponent_list(p: int) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    mask = (a + b) < p
    return a[mask], b[mask]


def _shift_matrix(p: int, t, dtype=float) -> np.ndarray:
    """``B[i, a] = C(a, i) t^(a-i)`` so that ``(t + z)^a = sum_i B[i, a] z^i``."""
    a = np.arange(p)
    i = a[:, None]
    binom = special.comb(a[None, :], i, exact=False).astype(dtype)   # small integers: exact
    power = np.asarray(t, dtype=dtype) ** np.maximum(a[None, :] - i, 0)
    return np.where(a[None, :] >= i, binom * power, 0)


def _shifted_basis(spec: BasisSpec, t, dtype=float) -> np.ndarray:
    """Coefficients ``S[l, i, j]`` with ``b_l(t + z) = sum S[l,i,j] z1^i z2^j``."""
    C = monomial_coefficients(spec).astype(dtype)
    B1 = _shift_matrix(spec.p, t[0], dtype)
    B2 = _shift_matrix(spec.p, t[1], dtype)
    return np.einsum("ia,lab,jb->lij", B1, C, B2)


_EDGE_NODES = 72


def _edge_panels(eta_foot: float, eta: float) -> list[tuple[float, float]]:
    """Panels on ``[0, 1]`` graded toward the foot ``s0`` of the perpendicular.

    ``eta`` is the distance of the nearest complex singularity of ``log R^2``
    from the real axis, in units of the edge length.
    """
    s0 = eta_foot
    pts = {0.0, 1.0}
    if 0.0 < s0 < 1.0:
        pts.add(s0)
    for side in (-1, 1):
        h = max(eta, 1e-14)
        while h < 1.0:
            s = s0 + side * h
            if 0.0 < s < 1.0:
                pts.add(s)
            h *= 2.0
    pts = sorted(pts)
    return list(zip(pts[:-1], pts[1:]))


def _triangle_moments(t, A, B, scale: float, pmax: int, p: int, dtype=float):
    """Signed moments over the triangle (t, A, B) of relative monomials.

    Returns arrays ``pow[i, j, m]`` and ``log[i, j, m]`` of
    ``int (rho/(2 scale))^{2m} [log(rho/(2 scale))] z1^i z2^j dz``
    with ``z = y - t``, for ``i + j < p``.  With ``dtype=np.longdouble`` the
    edge rule and all accumulation run in extended precision.
    """
    t = np.asarray(t, dtype=dtype)
    A = np.asarray(A, dtype=dtype)
    B = np.asarray(B, dtype=dtype)
    e = B - A
    a = A - t
    cross = a[0] * e[1] - a[1] * e[0]
    nz = p
    out_p = np.zeros((nz, nz, pmax + 1), dtype=dtype)
    out_l = np.zeros((nz, nz, pmax + 1), dtype=dtype)
    elen2 = float(e @ e)
    if abs(float(cross)) <= 1e-15 * elen2 or elen2 == 0.0:
        return out_p, out_l
    s0 = -float(a @ e) / elen2
    eta = abs(float(cross)) / elen2
    xg, wg = _gl_ext(_EDGE_NODES) if dtype == np.longdouble else _gl(_EDGE_NODES)
    m = np.arange(pmax + 1)
    ii, jj = _exponent_list(p)
    deg = ii + jj
    n_exp = 2 * m[None, :] + deg[:, None] + 2  # (n_mono, M)
    inv4s2 = 1 / (4 * np.asarray(scale, dtype=dtype) ** 2)
    for lo, hi in _edge_panels(s0, eta):
        s = 0.5 * (hi + lo) + 0.5 * (hi - lo) * xg
        w = 0.5 * (hi - lo) * wg
        P = a[None, :] + s[:, None] * e[None, :]           # P - t
        R2 = np.einsum("ki,ki->k", P, P) * inv4s2           # (R / 2 scale)^2
        lr = 0.5 * np.log(R2)                               # log(R / 2 scale)
        mono = P[:, 0:1] ** ii[None, :] * P[:, 1:2] ** jj[None, :]   # (K, n_mono)
        R2m = R2[:, None] ** m[None, :]                     # (K, M)
        base = (w[:, None] * mono)[:, :, None] * R2m[:, None, :] / n_exp[None]
        out_p[ii, jj] += cross * base.sum(axis=0)
        out_l[ii, jj] += cross * (base * (lr[:, None, None] - 1.0 / n_exp[None])).sum(axis=0)
    return out_p, out_l


def box_moments(spec: BasisSpec, targets: np.ndarray, rect, scale: float = 1.0,
                pmax: int = 60, dtype=float) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the unit-box basis over a rectangle for a batch of targets.

    Parameters
    ----------
    targets : (T, 2) array
        Target points in unit-box coordinates.
    rect : (x0, x1, y0, y1)
        Integration rectangle inside ``U``.
    scale : float
        Radii are measured in units of ``scale`` (1 for ``U``, 1/2 for a child).

    Returns
    -------
    power, logpow : (T, N_p, pmax+1) arrays
        ``int_rect (r/2)^{2m} b_l`` and ``int_rect (r/2)^{2m} log(r/2) b_l``
        with ``r = |t - y| / scale``.  Always float64; ``dtype`` only sets the
        working precision.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    x0, x1, y0, y1 = rect
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    n_b = spec.n_basis
    pw = np.empty((len(targets), n_b, pmax + 1))
    lg = np.empty_like(pw)
    for k, t in enumerate(targets):
        mp = np.zeros((spec.p, spec.p, pmax + 1), dtype=dtype)
        ml = np.zeros_like(mp)
        for c in range(4):
            a, b = _triangle_moments(t, corners[c], corners[(c + 1) % 4], scale, pmax, spec.p,
                                     dtype)
            mp += a
            ml += b
        S = _shifted_basis(spec, t, dtype)
        pw[k] = np.einsum("lij,ijm->lm", S, mp)
        lg[k] = np.einsum("lij,ijm->lm", S, ml)
    return pw, lg


# ---------------------------------------------------------------------------
# near-field tables
# ---------------------------------------------------------------------------

def _slot_centers(relation: str) -> tuple[np.ndarray, float]:
    """Centres of the neighbour boxes (relative to the source centre) and their side."""
    if relation == "colleague":
        c = [(ox, oy) for oy in (-1, 0, 1) for ox in (-1, 0, 1)]
        return np.array(c, dtype=float), 1.0
    if relation == "coarse":
        return np.array([(ax + 0.5, ay + 0.5) for ax, ay in COARSE_SLOTS], dtype=float), 2.0
    if relation == "fine":
        return np.array([(ax - 0.25, ay - 0.25) for ax, ay in FINE_SLOTS], dtype=float), 0.5
    raise ValueError(f"unknown relation {relation!r}")


def table_targets(relation: str, p: int) -> np.ndarray:
    """Target points of a relation in source-box units; index ``slot * p^2 + j``."""
    centers, side = _slot_centers(relation)
    g = unit_grid(p)
    return (centers[:, None, :] + side * g[None, :, :]).reshape(-1, 2)


def _rect_of(center, size):
    h = 0.5 * size
    return (center[0] - h, center[0] + h, center[1] - h, center[1] + h)


@dataclass
class NearFieldTable:
    """Tabulated moments for one neighbour relation.

    For ``child_split`` tables the first axis runs over (target, child) pairs,
    child fastest, and radii are measured in child units.
    """

    relation: str
    child_split: bool
    p: int
    pmax: int
    grid_kind: str
    targets: np.ndarray
    power: np.ndarray
    logpow: np.ndarray

    @property
    def n_basis(self) -> int:
        return self.p * (self.p + 1) // 2

    @property
    def n_targets(self) -> int:
        return len(self.targets)

    @property
    def spec(self) -> BasisSpec:
        return BasisSpec(self.p)


# Tables are generated in extended precision: exterior targets make the signed
# triangle contributions and the shifted monomials cancel, and the series
# coefficients amplify what is left by up to ~1e2 for kappa * L = 4.
_TABLE_DTYPE = np.longdouble


def build_near_table(relation: str, p: int, pmax: int = 60, child_split: bool = False) -> NearFieldTable:
    """Compute the moment table of one relation (wavenumber independent)."""
    spec = BasisSpec(p)
    tg = table_targets(relation, p)
    if not child_split:
        pw, lg = box_moments(spec, tg, (-0.5, 0.5, -0.5, 0.5), 1.0, pmax, _TABLE_DTYPE)
    else:
        parts = [box_moments(spec, tg, _rect_of(c, 0.5), 0.5, pmax, _TABLE_DTYPE)
                 for c in CHILD_CENTERS]
        pw = np.stack([q[0] for q in parts], axis=1).reshape(-1, spec.n_basis, pmax + 1)
        lg = np.stack([q[1] for q in parts], axis=1).reshape(-1, spec.n_basis, pmax + 1)
    return NearFieldTable(relation=relation, child_split=child_split, p=p, pmax=pmax,
                          grid_kind=spec.grid_kind, targets=tg, power=pw, logpow=lg)


# ---------------------------------------------------------------------------
# far-field moments
# ---------------------------------------------------------------------------

def _sub_boxes(depth: int):
    """Dyadic sub-boxes of ``U`` down to ``depth``: key -> (centre, size)."""
    boxes = {(): (np.zeros(2), 1.0)}
    frontier = [()]
    for _ in range(depth):
        nxt = []
        for key in frontier:
            c, s = boxes[key]
            for k, off in enumerate(CHILD_CENTERS):
                kk = key + (k,)
                boxes[kk] = (c + s * off, 0.5 * s)
                nxt.append(kk)
        frontier = nxt
    return boxes


@dataclass
class FarFieldMoments:
    """Multipole moments of the unit-box basis for one value of ``z = kappa L``.

    ``C[key]`` holds ``int_S J_n(z |y - c_S|) e^{-i n theta} b_l(y) dy`` for
    ``n = -L..L`` over the dyadic sub-box ``S`` named by ``key`` (``()`` is
    ``U``, ``(k,)`` its child ``k``, ``(k, m)`` a grandchild).  ``Mdag[key]``
    is ``C[key] @ Qdag`` (shape ``(2L+1, p^2)``).
    """

    L: int
    kappaL: float
    boxes: dict
    C: dict
    Mdag: dict = field(default_factory=dict)

    def center(self, key) -> np.ndarray:
        return self.boxes[key][0]

    def size(self, key) -> float:
        return self.boxes[key][1]


def _moment_integrals(spec: BasisSpec, z: float, L: int, center, size, nq: int = 48) -> np.ndarray:
    x, w = _gl(nq)
    h = 0.5 * size
    X = center[0] + h * x[:, None] + 0.0 * x[None, :]
    Y = center[1] + h * x[None, :] + 0.0 * x[:, None]
    W = (h * h) * w[:, None] * w[None, :]
    dx, dy = X - center[0], Y - center[1]
    rho = np.hypot(dx, dy)
    ang = np.exp(-1j * np.arctan2(dy, dx))
    n = np.arange(L + 1)
    J = special.jv(n[None, None, :], z * rho[..., None])
    ph = ang[..., None] ** n
    b = basis_matrix(spec, X, Y)                       # (nq, nq, N_p)
    pos = np.einsum("xyn,xyl->nl", W[..., None] * J * ph, b)
    neg = np.einsum("xyn,xyl->nl", W[..., None] * J * np.conj(ph), b)
    neg = neg * ((-1.0) ** n)[:, None]                 # J_{-n} = (-1)^n J_n
    return np.concatenate([neg[:0:-1], pos], axis=0)   # n = -L..L


def build_far_moments(kappaL: float, L: int, interp: InterpOperator, depth: int = 2) -> FarFieldMoments:
    """Far-field moments of ``U`` and its sub-boxes down to ``depth`` levels.

    The moments depend only on ``kappa * L_B`` and are shared by every box of
    a tree level.
    """
    boxes = _sub_boxes(depth)
    C, Md = {}, {}
    for key, (c, s) in boxes.items():
        C[key] = _moment_integrals(interp.spec, kappaL, L, c, s)
        Md[key] = C[key] @ interp.Qdag
    return FarFieldMoments(L=L, kappaL=float(kappaL), boxes=boxes, C=C, Mdag=Md)


def multipole_eval(far: FarFieldMoments, key, targets: np.ndarray, weights: np.ndarray | None = None):
    """Sum ``sum_n C[n, l] H_n(z rho) e^{i n theta}`` for targets in unit-box units.

    Returns ``(T, N_p)``; with ``weights`` (``(2L+1, k)``) returns ``(T, k)``
    using those moment rows instead of ``C``.
    """
    c = far.center(key)
    d = np.atleast_2d(targets) - c
    G = _hankel_phase(far.L, far.kappaL * np.hypot(d[:, 0], d[:, 1]), d)
    M = far.C[key] if weights is None else weights
    return G @ M


def _hankel_phase(L: int, krho: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Rows ``H_n(k rho) e^{i n theta}`` for ``n = -L..L``."""
    H = hankel1_sequence(L, krho)
    rho = np.hypot(d[:, 0], d[:, 1])
    w = (d[:, 0] + 1j * d[:, 1]) / rho
    pw = w[:, None] ** np.arange(L + 1)
    pos = H * pw
    sgn = (-1.0) ** np.arange(L + 1)
    neg = (H * sgn) * np.conj(pw)
    return np.concatenate([neg[:, :0:-1], pos], axis=1)


# ---------------------------------------------------------------------------
# zoned evaluation of unit-box integrals
# ---------------------------------------------------------------------------

def _maxdist(t: np.ndarray, center, size) -> np.ndarray:
    return np.max(np.abs(t - center), axis=1) / size


def zone_integrals(t: np.ndarray, z: float, far: FarFieldMoments, series_moments,
                   key=(), pmax: int = 60, ids: np.ndarray | None = None) -> np.ndarray:
    """``int_S H0(z |t - y|) b_l(y) dy`` over sub-box ``key`` for targets ``t``.

    ``series_moments(key, idx)`` must return ``(power, logpow)`` for the
    targets with original indices ``idx`` over the sub-box, radii in sub-box
    units.  ``ids`` maps rows of ``t`` to those original indices (identity
    by default).
    """
    t = np.atleast_2d(t)
    if ids is None:
        ids = np.arange(len(t))
    c, s = far.center(key), far.size(key)
    out = np.zeros((len(t), far.C[()].shape[1]), dtype=complex)
    d = _maxdist(t, c, s)
    zs = z * s
    m_far = d >= CHILD_ZONE
    if m_far.any():
        out[m_far] = multipole_eval(far, key, t[m_far])
    m_kid = (d >= SERIES_ZONE) & ~m_far
    if m_kid.any():
        for k in range(4):
            out[m_kid] += multipole_eval(far, key + (k,), t[m_kid])
    m_near = d < SERIES_ZONE
    if m_near.any():
        idx = np.nonzero(m_near)[0]
        if zs <= SPLIT_Z * (1 + 1e-12):
            pw, lg = series_moments(key, ids[idx])
            co = series_coeffs(zs, pmax)
            vals = np.einsum("tlm,m->tl", pw, co.c) + np.einsum("tlm,m->tl", lg, co.d)
            out[idx] = vals
        else:
            for k in range(4):
                out[idx] += zone_integrals(t[idx], z, far, series_moments, key + (k,), pmax,
                                           ids[idx])
    return out


def _on_the_fly_moments(spec: BasisSpec, t: np.ndarray, far: FarFieldMoments, pmax: int):
    def get(key, idx):
        c, s = far.center(key), far.size(key)
        return box_moments(spec, t[idx], _rect_of(c, s), s, pmax)
    return get


def unit_integrals(spec: BasisSpec, t: np.ndarray, z: float, far: FarFieldMoments,
                   pmax: int = 60) -> np.ndarray:
    """``I_l(t) = int_U H0(z |t - y|) b_l(y) dy`` at arbitrary targets."""
    t = np.atleast_2d(np.asarray(t, dtype=float))
    return zone_integrals(t, z, far, _on_the_fly_moments(spec, t, far, pmax), (), pmax)


def near_integrals(tables: dict, relation: str, z: float, far: FarFieldMoments,
                   pmax: int | None = None) -> np.ndarray:
    """Unit-box integrals at every target of a relation, using the tables.

    ``tables`` maps ``(relation, child_split)`` to :class:`NearFieldTable`.
    Returns ``(n_targets, N_p)`` complex.
    """
    base = tables[(relation, False)]
    split = tables.get((relation, True))
    pmax = base.pmax if pmax is None else pmax
    t = base.targets
    spec = base.spec

    def get(key, idx):
        if key == ():
            return base.power[idx, :, :pmax + 1], base.logpow[idx, :, :pmax + 1]
        if len(key) == 1 and split is not None:
            rows = 4 * idx + key[0]
            return split.power[rows, :, :pmax + 1], split.logpow[rows, :, :pmax + 1]
        c, s = far.center(key), far.size(key)
        return box_moments(spec, t[idx], _rect_of(c, s), s, pmax)

    return zone_integrals(t, z, far, get, (), pmax)


def near_entry(table: NearFieldTable, target_index: int, l: int, kappaL: float,
               coeffs: HankelSeriesCoeffs | None = None, *, far: FarFieldMoments | None = None,
               side: float = 1.0) -> complex:
    """Near-field integral ``V^kappa_{il} = (i L^2/4) int_U H0(kappa L r) b_l``.

    For an unsplit table (``kappaL <= 4``) a target in the series zone is
    contracted directly with ``coeffs``.  For a child-split table the four
    children are summed, each with series coefficients for ``kappaL / 2``
    (``coeffs``, when given, must be those).  Targets or target/child pairs
    outside the series zone need ``far`` moments for ``kappaL``.
    """
    if not (0.0 < kappaL <= 8.0 * (1 + 1e-12)):
        raise ValueError(f"kappaL={kappaL} outside (0, 8]")
    if kappaL > SPLIT_Z * (1 + 1e-12) and not table.child_split:
        raise ValueError("kappaL > 4 requires a child-split table")
    pmax = table.pmax if coeffs is None else coeffs.pmax
    z_series = 0.5 * kappaL if table.child_split else kappaL
    co = coeffs if coeffs is not None else series_coeffs(z_series, pmax)
    t = table.targets[target_index:target_index + 1]
    if table.child_split:
        parts = [((k,), 4 * target_index + k, CHILD_CENTERS[k], 0.5) for k in range(4)]
    else:
        parts = [((), target_index, np.zeros(2), 1.0)]
    total = 0j
    for key, row, center, size in parts:
        if _maxdist(t, center, size)[0] < SERIES_ZONE:
            total += table.power[row, l, :pmax + 1] @ co.c + table.logpow[row, l, :pmax + 1] @ co.d
            continue
        if far is None:
            raise ValueError("target outside the series zone: far moments required")
        # outside the series zone only multipoles are used, never moments
        total += zone_integrals(t, kappaL, far, None, key, pmax)[0, l]
    return complex(0.25j * side * side * total)


# ---------------------------------------------------------------------------
# table cache
# ---------------------------------------------------------------------------

_MAGIC = "LSTAB1"


def write_table(table: NearFieldTable, path) -> None:
    """Write a table: text header, little-endian float64 power then logpow
    blocks in ``[target][l][m]`` order, then a SHA-256 trailer line."""
    header = (f"{_MAGIC} {table.p} {table.n_basis} {table.pmax} {table.relation} "
              f"{int(table.child_split)} {table.grid_kind}\n").encode("ascii")
    body = (np.ascontiguousarray(table.power, dtype="<f8").tobytes()
            + np.ascontiguousarray(table.logpow, dtype="<f8").tobytes())
    digest = hashlib.sha256(header + body).hexdigest()
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(body)
        fh.write(f"\nSHA256 {digest}\n".encode("ascii"))
    os.replace(tmp, path)


def read_table(path) -> NearFieldTable:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = raw[:nl + 1]
    parts = header.decode("ascii").split()
    if parts[0] != _MAGIC:
        raise ValueError(f"{path}: not a near-field table")
    p, n_b, pmax = int(parts[1]), int(parts[2]), int(parts[3])
    relation, child_split, grid_kind = parts[4], bool(int(parts[5])), parts[6]
    n_t = len(table_targets(relation, p)) * (4 if child_split else 1)
    nbytes = 2 * n_t * n_b * (pmax + 1) * 8
    body = raw[nl + 1: nl + 1 + nbytes]
    trailer = raw[nl + 1 + nbytes:].decode("ascii").split()
    if len(trailer) != 2 or trailer[0] != "SHA256" or \
            trailer[1] != hashlib.sha256(header + body).hexdigest():
        raise ValueError(f"{path}: checksum mismatch")
    arr = np.frombuffer(body, dtype="<f8").reshape(2, n_t, n_b, pmax + 1).astype(float)
    return NearFieldTable(relation=relation, child_split=child_split, p=p, pmax=pmax,
                          grid_kind=grid_kind, targets=table_targets(relation, p),
                          power=arr[0], logpow=arr[1])


def table_filename(relation: str, p: int, pmax: int, child_split: bool) -> str:
    kind = BasisSpec(p).grid_kind
    return f"lstab_p{p}_pmax{pmax}_{relation}_{'split' if child_split else 'full'}_{kind}.bin"


def load_or_build_table(relation: str, p: int, pmax: int = 60, child_split: bool = False,
                        cache_dir=None) -> NearFieldTable:
    """Fetch a table from ``cache_dir`` or build (and store) it."""
    if cache_dir is not None:
        path = Path(cache_dir) / table_filename(relation, p, pmax, child_split)
        if path.exists():
            try:
                return read_table(path)
            except ValueError:
                logger.warning("discarding corrupt table cache %s", path)
    logger.info("building %s table p=%d pmax=%d split=%s", relation, p, pmax, child_split)
    table = build_near_table(relation, p, pmax, child_split)
    if cache_dir is not None:
        Path(cache_dir).mkdir(parents=True, exist_ok=True)
        write_table(table, Path(cache_dir) / table_filename(relation, p, pmax, child_split))
    return table
