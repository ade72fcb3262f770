"""Random access to entries of the Nystrom system ``A = I - kappa^2 diag(q) V``.

With ``u = u_inc + u_scat`` solving ``Delta u + kappa^2 (1 + q) u = 0`` and the
scattered field written as ``u_scat = V[psi]`` for the outgoing kernel
``(i/4) H0``, the density satisfies ``psi - kappa^2 q V[psi] = kappa^2 q u_inc``.

``V[i, j]`` is the contribution of grid value ``psi_j`` to the volume
potential at grid point ``x_i``: with ``j`` the local point ``jl`` of source
leaf ``B``,

    V[i, j] = (i/4) sum_l Qdag[l, jl] int_B H0(kappa |x_i - y|) b_l(y) dy.

All entries of one (target point, source leaf) pair are produced together.
Touching pairs read precomputed per-level near tables; every other pair is
evaluated from per-level multipole moments of the source box (or of its four
children when the target is closer than 1.5 box sides).
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ._kernels import multipole_rows, multipole_sum
from .interp import BasisSpec, InterpOperator, build_interp
from .quadgen import (CHILD_CENTERS, CHILD_ZONE, SERIES_ZONE, FarFieldMoments,
                      build_far_moments, load_or_build_table, near_integrals, unit_integrals)
from .tree import (COARSE_SLOTS, FINE_SLOTS, TABLE_ZMAX, MalformedTreeError, QuadTree,
                   all_grid_points)

logger = logging.getLogger(__name__)

__all__ = [
    "EntryKind",
    "EntryContext",
    "build_context",
    "pair_kinds",
    "pair_values",
    "v_entry",
    "a_entry",
    "far_eval",
    "sepfine_eval",
    "block",
    "accessor",
    "apply_volume",
    "plane_wave",
]

RELATIONS = ("colleague", "coarse", "fine")


class EntryKind(enum.IntEnum):
    SELF_OR_COLLEAGUE = 0
    COARSE = 1
    FINE = 2
    SEPARATED_FINE = 3
    FAR = 4


def plane_wave(kappa: float, pts: np.ndarray) -> np.ndarray:
    """Incident field ``exp(i kappa x1)``."""
    return np.exp(1j * kappa * np.asarray(pts)[..., 0])


@lru_cache(maxsize=64)
def _far_cached(z: float, L: int, p: int) -> FarFieldMoments:
    return build_far_moments(z, L, build_interp(BasisSpec(p)), depth=2)


@lru_cache(maxsize=8)
def _tables_cached(p: int, pmax: int, cache_dir) -> dict:
    return {(rel, split): load_or_build_table(rel, p, pmax, split, cache_dir)
            for rel in RELATIONS for split in (False, True)}


def default_cache_dir() -> str:
    """Table cache directory: ``$LS2D_TABLE_CACHE``, else ``$XDG_CACHE_HOME/ls2d``
    (``~/.cache/ls2d``)."""
    env = os.environ.get("LS2D_TABLE_CACHE")
    if env:
        return env
    base = os.environ.get("XDG_CACHE_HOME") or os.path.join(os.path.expanduser("~"), ".cache")
    return os.path.join(base, "ls2d")


@dataclass
class LevelData:
    """Per-level operators, already scaled by ``(i/4) L^2`` and contracted with ``Qdag``."""

    level: int
    side: float
    z: float
    far: FarFieldMoments
    near: dict            # relation -> (n_targets, p^2)
    mult: np.ndarray      # (2L+1, p^2) box multipole
    child_mult: list      # four (2L+1, p^2) child multipoles


def _slot_lookup(slots, scale: int) -> dict:
    return {(int(round(scale * a)), int(round(scale * b))): k for k, (a, b) in enumerate(slots)}


_COARSE_LUT = _slot_lookup(COARSE_SLOTS, 1)
_FINE_LUT = _slot_lookup(FINE_SLOTS, 2)


def _lut_array(lut: dict, lo: int, hi: int) -> np.ndarray:
    n = hi - lo + 1
    arr = -np.ones((n, n), dtype=np.int64)
    for (a, b), k in lut.items():
        arr[a - lo, b - lo] = k
    return arr


_COARSE_ARR = _lut_array(_COARSE_LUT, -2, 1)   # index [ax+2, ay+2]
_FINE_ARR = _lut_array(_FINE_LUT, -1, 2)       # index [2ax+1, 2ay+1]


@dataclass
class EntryContext:
    """Everything needed to evaluate any entry of the discretized operator.

    Global index ``i`` is local point ``i % p^2`` of leaf ``i // p^2``.
    """

    tree: QuadTree
    interp: InterpOperator
    kappa: float
    L: int
    points: np.ndarray
    q: np.ndarray
    f: np.ndarray
    levels: dict
    leaf_level: np.ndarray
    leaf_ix: np.ndarray
    leaf_iy: np.ndarray
    leaf_center: np.ndarray
    leaf_side: np.ndarray
    pmax: int = 60
    _near_flat: np.ndarray = field(default=None, repr=False)
    _near_base_arr: np.ndarray = field(default=None, repr=False)

    @property
    def p(self) -> int:
        return self.interp.p

    @property
    def pp(self) -> int:
        return self.interp.p ** 2

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_level)

    def split_index(self, i):
        i = np.asarray(i)
        return i // self.pp, i % self.pp

    def with_contrast(self, q: np.ndarray, f: np.ndarray | None = None) -> "EntryContext":
        """Copy sharing all geometry but with new contrast (and rhs) samples."""
        q = np.asarray(q, dtype=float)
        if f is None:
            f = self.kappa ** 2 * q * plane_wave(self.kappa, self.points)
        out = EntryContext(**{**self.__dict__, "q": q, "f": np.asarray(f, dtype=complex)})
        return out


def build_context(tree: QuadTree, kappa: float, q, f=None, *, L: int = 45, pmax: int = 60,
                  cache_dir=None) -> EntryContext:
    """Sample contrast and rhs at the grid and precompute per-level operators.

    ``q`` is a vectorized callable ``q(x, y)`` or an array of samples.  ``f``
    defaults to ``kappa^2 q exp(i kappa x)``.
    """
    p = tree.params.p
    interp = build_interp(BasisSpec(p))
    pts = all_grid_points(tree)
    qv = np.asarray(q(pts[:, 0], pts[:, 1]) if callable(q) else q, dtype=float)
    if qv.shape != (len(pts),):
        raise ValueError("contrast samples do not match the grid")
    if f is None:
        fv = kappa ** 2 * qv * plane_wave(kappa, pts)
    else:
        fv = np.asarray(f(pts[:, 0], pts[:, 1]) if callable(f) else f, dtype=complex)
    la = tree.leaf_arrays()
    if cache_dir is None:
        cache_dir = default_cache_dir()
    tables = _tables_cached(p, pmax, cache_dir)
    levels = {}
    for lev in np.unique(la["level"]):
        side = tree.side(int(lev))
        z = kappa * side
        if z > TABLE_ZMAX * (1 + 1e-12):
            raise ValueError(f"leaf level {lev} has kappa*L = {z:.3f} > {TABLE_ZMAX}; refine the tree")
        far = _far_cached(float(z), L, p)
        pref = 0.25j * side * side
        near = {rel: pref * (near_integrals(tables, rel, z, far, pmax) @ interp.Qdag)
                for rel in RELATIONS}
        levels[int(lev)] = LevelData(
            level=int(lev), side=side, z=z, far=far, near=near,
            mult=pref * far.Mdag[()],
            child_mult=[pref * far.Mdag[(k,)] for k in range(4)])
    ctx = EntryContext(tree=tree, interp=interp, kappa=float(kappa), L=L, points=pts, q=qv,
                       f=fv, levels=levels, leaf_level=la["level"], leaf_ix=la["ix"],
                       leaf_iy=la["iy"], leaf_center=la["center"], leaf_side=la["side"],
                       pmax=pmax)
    _stack_near(ctx)
    return ctx


def _stack_near(ctx: EntryContext) -> None:
    blocks, off = [], 0
    maxlev = max(ctx.levels) + 1
    base = -np.ones((maxlev, 3), dtype=np.int64)
    for lev, data in sorted(ctx.levels.items()):
        for r, rel in enumerate(RELATIONS):
            base[lev, r] = off
            blocks.append(data.near[rel])
            off += len(data.near[rel])
    ctx._near_flat = np.concatenate(blocks, axis=0)
    ctx._near_base_arr = base


# ---------------------------------------------------------------------------
# pair classification
# ---------------------------------------------------------------------------

def _touch_info(ctx: EntryContext, T: np.ndarray, S: np.ndarray):
    lt, ls = ctx.leaf_level[T], ctx.leaf_level[S]
    lv = np.maximum(lt, ls)
    st, ss = lv - lt, lv - ls
    tx0, ty0 = ctx.leaf_ix[T] << st, ctx.leaf_iy[T] << st
    sx0, sy0 = ctx.leaf_ix[S] << ss, ctx.leaf_iy[S] << ss
    tx1, ty1 = tx0 + (1 << st), ty0 + (1 << st)
    sx1, sy1 = sx0 + (1 << ss), sy0 + (1 << ss)
    touch = (tx0 <= sx1) & (sx0 <= tx1) & (ty0 <= sy1) & (sy0 <= ty1)
    return touch, lt, ls


def pair_kinds(ctx: EntryContext, T, S) -> np.ndarray:
    """Geometric relation of target leaves ``T`` to source leaves ``S``."""
    T = np.atleast_1d(np.asarray(T, dtype=np.int64))
    S = np.atleast_1d(np.asarray(S, dtype=np.int64))
    touch, lt, ls = _touch_info(ctx, T, S)
    kinds = np.full(T.shape, EntryKind.FAR, dtype=np.int64)
    kinds[touch & (lt == ls)] = EntryKind.SELF_OR_COLLEAGUE
    kinds[touch & (lt == ls - 1)] = EntryKind.COARSE
    kinds[touch & (lt == ls + 1)] = EntryKind.FINE
    if np.any(touch & (np.abs(lt - ls) > 1)):
        raise MalformedTreeError("touching leaves differ by more than one level")
    # separated fine: a child of a colleague of S that does not touch S
    sep = ~touch & (lt == ls + 1)
    if sep.any():
        px, py = ctx.leaf_ix[T[sep]] >> 1, ctx.leaf_iy[T[sep]] >> 1
        near = (np.abs(px - ctx.leaf_ix[S[sep]]) <= 1) & (np.abs(py - ctx.leaf_iy[S[sep]]) <= 1)
        idx = np.nonzero(sep)[0][near]
        kinds[idx] = EntryKind.SEPARATED_FINE
    return kinds


def _near_rows(ctx: EntryContext, T, S, jt, lt, ls) -> np.ndarray:
    """Row of the stacked near table for touching pairs."""
    rel = np.where(lt == ls, 0, np.where(lt == ls - 1, 1, 2))
    slot = np.empty(len(T), dtype=np.int64)
    m = rel == 0
    slot[m] = (ctx.leaf_iy[T[m]] - ctx.leaf_iy[S[m]] + 1) * 3 + (ctx.leaf_ix[T[m]] - ctx.leaf_ix[S[m]] + 1)
    m = rel == 1
    if m.any():
        ax = 2 * ctx.leaf_ix[T[m]] - ctx.leaf_ix[S[m]]
        ay = 2 * ctx.leaf_iy[T[m]] - ctx.leaf_iy[S[m]]
        slot[m] = _COARSE_ARR[ax + 2, ay + 2]
    m = rel == 2
    if m.any():
        ax = ctx.leaf_ix[T[m]] - 2 * ctx.leaf_ix[S[m]]
        ay = ctx.leaf_iy[T[m]] - 2 * ctx.leaf_iy[S[m]]
        slot[m] = _FINE_ARR[ax + 1, ay + 1]
    if np.any(slot < 0):
        raise MalformedTreeError("touching pair outside every tabulated relation")
    return ctx._near_base_arr[ls, rel] + slot * ctx.pp + jt


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _expansion_values(ctx: EntryContext, pts: np.ndarray, S: np.ndarray, local=None) -> np.ndarray:
    """Far and child-multipole values for target points against source leaves.

    Pairs must satisfy ``max|t - c_S| >= L_S`` (checked).
    """
    P = len(S)
    out = np.zeros((P, ctx.pp) if local is None else P, dtype=complex)
    if P == 0:
        return out
    c = ctx.leaf_center[S]
    h = ctx.leaf_side[S]
    d = pts - c
    dm = np.max(np.abs(d), axis=1) / h
    if np.any(dm < SERIES_ZONE * (1 - 1e-12)):
        raise MalformedTreeError("non-touching pair inside the series zone of its source")
    lv = ctx.leaf_level[S]
    far = dm >= CHILD_ZONE
    for lev in np.unique(lv):
        data = ctx.levels[int(lev)]
        m = np.nonzero((lv == lev) & far)[0]
        if len(m):
            out[m] = multipole_sum(ctx.kappa, d[m], data.mult,
                                   None if local is None else local[m])
        m = np.nonzero((lv == lev) & ~far)[0]
        if len(m):
            for k in range(4):
                dd = d[m] - data.side * CHILD_CENTERS[k]
                out[m] += multipole_sum(ctx.kappa, dd, data.child_mult[k],
                                        None if local is None else local[m])
    return out


def pair_values(ctx: EntryContext, ti, S, local=None) -> np.ndarray:
    """``V[i, S*p^2 + j]`` for target indices ``ti`` and source leaves ``S``.

    Returns ``(P, p^2)``, or ``(P,)`` when ``local`` gives one source point
    per pair.
    """
    ti = np.atleast_1d(np.asarray(ti, dtype=np.int64))
    S = np.atleast_1d(np.asarray(S, dtype=np.int64))
    if local is not None:
        local = np.atleast_1d(np.asarray(local, dtype=np.int64))
    T, jt = ti // ctx.pp, ti % ctx.pp
    touch, lt, ls = _touch_info(ctx, T, S)
    out = np.empty((len(ti), ctx.pp) if local is None else len(ti), dtype=complex)
    m = np.nonzero(touch)[0]
    if len(m):
        if np.any(np.abs(lt[m] - ls[m]) > 1):
            raise MalformedTreeError("touching leaves differ by more than one level")
        rows = _near_rows(ctx, T[m], S[m], jt[m], lt[m], ls[m])
        out[m] = ctx._near_flat[rows] if local is None else ctx._near_flat[rows, local[m]]
    m = np.nonzero(~touch)[0]
    if len(m):
        out[m] = _expansion_values(ctx, ctx.points[ti[m]], S[m], None if local is None else local[m])
    return out


def v_entry(ctx: EntryContext, i: int, j: int) -> complex:
    """Entry ``V[i, j]`` of the discretized volume potential."""
    S, jl = divmod(int(j), ctx.pp)
    return complex(pair_values(ctx, [i], [S], [jl])[0])


def a_entry(ctx: EntryContext, i: int, j: int) -> complex:
    """Entry ``A[i, j] = delta_ij - kappa^2 q_i V[i, j]``."""
    return float(i == j) - ctx.kappa ** 2 * ctx.q[i] * v_entry(ctx, i, j)


def far_eval(ctx: EntryContext, level: int, center, target, j: int) -> complex:
    """Multipole value of source point ``j`` of a level-``level`` box at ``target``.

    Refuses targets closer than 1.5 box sides (max norm) to the box centre.
    """
    data = ctx.levels[level]
    d = np.asarray(target, dtype=float) - np.asarray(center, dtype=float)
    if np.max(np.abs(d)) < CHILD_ZONE * data.side * (1 - 1e-12):
        raise ValueError("target inside the region where the box expansion is not used")
    return complex(multipole_sum(ctx.kappa, d[None], data.mult, [j])[0])


def sepfine_eval(ctx: EntryContext, level: int, center, target, j: int) -> complex:
    """Sum of the four child expansions of a level-``level`` box at ``target``."""
    data = ctx.levels[level]
    d = np.asarray(target, dtype=float) - np.asarray(center, dtype=float)
    if np.max(np.abs(d)) < SERIES_ZONE * data.side * (1 - 1e-12):
        raise ValueError("target too close for the child expansions")
    tot = 0j
    for k in range(4):
        dd = d - data.side * CHILD_CENTERS[k]
        tot += multipole_sum(ctx.kappa, dd[None], data.child_mult[k], [j])[0]
    return complex(tot)


def accessor(ctx: EntryContext, operator: str = "A"):
    """Entry accessor ``get(rows, cols)`` for the solvers."""
    return lambda rows, cols: block(ctx, rows, cols, operator=operator)


def block(ctx: EntryContext, rows, cols, *, operator: str = "A") -> np.ndarray:
    """Dense sub-block of ``A`` (or of ``V`` with ``operator="V"``)."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    out = np.empty((len(rows), len(cols)), dtype=complex)
    if len(rows) == 0 or len(cols) == 0:
        return out
    S, jl = cols // ctx.pp, cols % ctx.pp
    if len(cols) >= ctx.pp and len(np.unique(S)) * ctx.pp <= 2 * len(cols):
        leaves, inv = np.unique(S, return_inverse=True)
        ti = np.repeat(rows, len(leaves))
        ss = np.tile(leaves, len(rows))
        vals = pair_values(ctx, ti, ss).reshape(len(rows), len(leaves), ctx.pp)
        out[:] = vals[:, inv, jl]
    else:
        ti = np.repeat(rows, len(cols))
        vals = pair_values(ctx, ti, np.tile(S, len(rows)), np.tile(jl, len(rows)))
        out[:] = vals.reshape(len(rows), len(cols))
    if operator == "V":
        return out
    out *= (-ctx.kappa ** 2 * ctx.q[rows])[:, None]
    eq = rows[:, None] == cols[None, :]
    out[eq] += 1.0
    return out


# ---------------------------------------------------------------------------
# potential at arbitrary points
# ---------------------------------------------------------------------------

def _grid_index_of(ctx: EntryContext, pts: np.ndarray) -> np.ndarray:
    """Global index of each point that coincides with a grid point, else -1."""
    from scipy.spatial import cKDTree
    tree = cKDTree(ctx.points)
    dist, idx = tree.query(pts)
    tol = 1e-12 * max(1.0, float(ctx.tree.domain.side))
    return np.where(dist <= tol, idx, -1)


def apply_volume(ctx: EntryContext, psi: np.ndarray, targets: np.ndarray, *,
                 chunk: int = 200_000) -> np.ndarray:
    """Volume potential ``V[psi]`` at arbitrary points.

    Grid points use the same tabulated entries as the matrix; other points
    use multipole expansions away from each leaf and moments computed on the
    fly nearby.
    """
    psi = np.asarray(psi, dtype=complex)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.zeros(len(targets), dtype=complex)
    if not np.any(psi) or len(targets) == 0:
        return out
    M, pp = ctx.n_leaves, ctx.pp
    psi_l = psi.reshape(M, pp)
    gidx = _grid_index_of(ctx, targets)
    # per-leaf aggregated expansion coefficients
    alpha = np.empty((M, 2 * ctx.L + 1), dtype=complex)
    alpha_c = np.empty((4, M, 2 * ctx.L + 1), dtype=complex)
    for lev, data in ctx.levels.items():
        m = ctx.leaf_level == lev
        alpha[m] = psi_l[m] @ data.mult.T
        for k in range(4):
            alpha_c[k, m] = psi_l[m] @ data.child_mult[k].T
    step = max(1, chunk // M)
    for t0 in range(0, len(targets), step):
        tt = np.arange(t0, min(len(targets), t0 + step))
        ti = np.repeat(tt, M)
        S = np.tile(np.arange(M), len(tt))
        pts = targets[ti]
        d = pts - ctx.leaf_center[S]
        dm = np.max(np.abs(d), axis=1) / ctx.leaf_side[S]
        acc = np.zeros(len(ti), dtype=complex)
        on_grid = gidx[ti] >= 0
        if on_grid.any():
            touch, _, _ = _touch_info(ctx, gidx[ti] // pp, S)
        else:
            touch = np.zeros(len(ti), dtype=bool)
        near_grid = on_grid & touch
        if near_grid.any():
            m = np.nonzero(near_grid)[0]
            vals = pair_values(ctx, gidx[ti[m]], S[m])
            acc[m] = np.einsum("pj,pj->p", vals, psi_l[S[m]])
        far = ~near_grid & (dm >= CHILD_ZONE)
        if far.any():
            m = np.nonzero(far)[0]
            acc[m] = multipole_rows(ctx.kappa, d[m], alpha[S[m]])
        mid = ~near_grid & (dm >= SERIES_ZONE) & (dm < CHILD_ZONE)
        if mid.any():
            m = np.nonzero(mid)[0]
            for k in range(4):
                dd = d[m] - ctx.leaf_side[S[m], None] * CHILD_CENTERS[k]
                acc[m] += multipole_rows(ctx.kappa, dd, alpha_c[k, S[m]])
        close = ~near_grid & (dm < SERIES_ZONE)
        for m in np.nonzero(close)[0]:
            s = S[m]
            data = ctx.levels[int(ctx.leaf_level[s])]
            u = d[m] / data.side
            I = unit_integrals(ctx.interp.spec, u[None], data.z, data.far, ctx.pmax)
            vals = 0.25j * data.side ** 2 * (I @ ctx.interp.Qdag)
            acc[m] = vals[0] @ psi_l[s]
        np.add.at(out, ti, acc)
    return out
