"""Hierarchically off-diagonal low-rank (HODLR) direct solver.

The unknowns are ordered by recursive coordinate bisection of leaf centres,
so every cluster of the resulting binary tree is a contiguous index range
whose points are geometrically compact.  Each off-diagonal block
``A[c1, c2]`` of a cluster with children ``c1, c2`` is compressed by
adaptive cross approximation to ``U W^T``.

Writing a cluster's matrix as ``D + U_b W_b^T`` with ``D`` block-diagonal
over the children, the Woodbury identity gives

    A^{-1} = (I - Y K^{-1} W_b^T) D^{-1},   Y = D^{-1} U_b,   K = I + W_b^T Y,

so the factorization stores ``Y`` and an LU of the small ``K`` per cluster,
computed from the leaves upward.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import scipy.linalg as sla

logger = logging.getLogger(__name__)

__all__ = [
    "EntryAccessor",
    "Ordering",
    "Cluster",
    "HodlrFactor",
    "RankCapExceeded",
    "build_ordering",
    "compress_block",
    "factor",
    "solve",
    "dense_solve",
    "sampled_residual",
]


class EntryAccessor(Protocol):
    """Anything returning the dense sub-block ``A[rows][:, cols]``."""

    def __call__(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray: ...


class RankCapExceeded(RuntimeError):
    """An off-diagonal block did not compress below the rank cap."""


# ---------------------------------------------------------------------------
# ordering
# ---------------------------------------------------------------------------

@dataclass
class Cluster:
    start: int
    stop: int
    level: int
    parent: int = -1
    children: tuple[int, int] | None = None
    center: np.ndarray = field(default=None, repr=False)
    diameter: float = 0.0

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass
class Ordering:
    """Permutation ``perm`` (position -> global index) and its cluster tree."""

    perm: np.ndarray
    clusters: list[Cluster]
    n_leaf: int

    @property
    def n(self) -> int:
        return len(self.perm)

    @property
    def depth(self) -> int:
        return max(c.level for c in self.clusters)

    def leaves(self) -> list[int]:
        return [k for k, c in enumerate(self.clusters) if c.children is None]

    def by_level(self) -> list[list[int]]:
        out = [[] for _ in range(self.depth + 1)]
        for k, c in enumerate(self.clusters):
            out[c.level].append(k)
        return out


def build_ordering(leaf_centers: np.ndarray, points_per_leaf: int, n_leaf: int = 128,
                   points: np.ndarray | None = None) -> Ordering:
    """k-d ordering of leaf boxes; each leaf's points stay together.

    Clusters are split along the longer side of their bounding box at the
    median leaf until they hold at most ``n_leaf`` points (or one leaf).
    """
    leaf_centers = np.asarray(leaf_centers, dtype=float)
    M = len(leaf_centers)
    order = np.arange(M)
    clusters: list[Cluster] = []

    def geometry(ids):
        pts = leaf_centers[ids] if points is None else points[
            (ids[:, None] * points_per_leaf + np.arange(points_per_leaf)).ravel()]
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return 0.5 * (lo + hi), float(np.hypot(*(hi - lo))), hi - lo

    stack = [(0, M, 0, -1)]
    while stack:
        a, b, lev, parent = stack.pop()
        ids = order[a:b]
        c, diam, ext = geometry(ids)
        k = len(clusters)
        clusters.append(Cluster(a * points_per_leaf, b * points_per_leaf, lev, parent,
                                center=c, diameter=diam))
        if parent >= 0:
            p = clusters[parent]
            p.children = (k,) if p.children is None else (p.children[0], k)
        if (b - a) * points_per_leaf <= n_leaf or b - a < 2:
            continue
        axis = int(np.argmax(ext))
        key = leaf_centers[ids, axis]
        srt = np.argsort(key, kind="stable")
        order[a:b] = ids[srt]
        mid = a + (b - a) // 2
        # push right first so the left child gets the lower cluster id
        stack.append((mid, b, lev + 1, k))
        stack.append((a, mid, lev + 1, k))
    perm = (order[:, None] * points_per_leaf + np.arange(points_per_leaf)).ravel()
    return Ordering(perm=perm, clusters=clusters, n_leaf=n_leaf)


# ---------------------------------------------------------------------------
# compression
# ---------------------------------------------------------------------------

def _recompress(U: np.ndarray, V: np.ndarray, eps: float):
    if U.shape[1] == 0:
        return U, V
    qu, ru = np.linalg.qr(U)
    qv, rv = np.linalg.qr(V)
    u, s, vh = np.linalg.svd(ru @ rv.T)
    keep = int(np.sum(s > eps * s[0])) if s[0] > 0 else 0
    return qu @ (u[:, :keep] * s[:keep]), qv @ vh[:keep].T


_TINY = 1e-280  # pivots below this are treated as exact zeros


def compress_block(get: EntryAccessor, rows: np.ndarray, cols: np.ndarray, eps: float, *,
                   max_rank: int | None = None, n_check: int = 8,
                   rng: np.random.Generator | None = None):
    """Low-rank factors ``U, V`` with ``A[rows, cols] ~ U V^T``.

    Partially pivoted cross approximation, stopped when the newest cross is
    below ``eps`` times the running Frobenius estimate and confirmed on
    ``n_check`` random columns, then recompressed by QR and SVD.

    Returns ``(U, V, rank)``.
    """
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    m, n = len(rows), len(cols)
    cap = min(m, n, 1000) if max_rank is None else min(max_rank, m, n)
    rng = np.random.default_rng(0) if rng is None else rng
    U = np.zeros((m, min(cap, 32)), dtype=complex)
    V = np.zeros((n, min(cap, 32)), dtype=complex)
    k = 0
    used_rows = np.zeros(m, dtype=bool)
    norm2 = 0.0
    i_piv = int(rng.integers(m))
    zero_rows = 0

    def grow():
        nonlocal U, V
        extra = min(U.shape[1], cap - U.shape[1])
        U = np.hstack([U, np.zeros((m, extra), dtype=complex)])
        V = np.hstack([V, np.zeros((n, extra), dtype=complex)])

    while True:
        # cross approximation sweep
        while k < cap:
            used_rows[i_piv] = True
            r = get(rows[i_piv:i_piv + 1], cols)[0] - V[:, :k] @ U[i_piv, :k]
            j_piv = int(np.argmax(np.abs(r)))
            piv = r[j_piv]
            if abs(piv) < _TINY:
                zero_rows += 1
                free = np.nonzero(~used_rows)[0]
                if len(free) == 0 or zero_rows > 8:
                    break
                i_piv = int(rng.choice(free))
                continue
            zero_rows = 0
            # modulus then phase: complex division by tiny pivots overflows
            v = (r / abs(piv)) * np.conj(piv / abs(piv))
            u = get(rows, cols[j_piv:j_piv + 1])[:, 0] - U[:, :k] @ V[j_piv, :k]
            cross = 2.0 * np.real(np.dot(u @ U[:, :k].conj(), v @ V[:, :k].conj())) if k else 0.0
            nu, nv = np.linalg.norm(u), np.linalg.norm(v)
            norm2 = max(norm2 + cross + (nu * nv) ** 2, 0.0)
            if k == U.shape[1]:
                grow()
            U[:, k], V[:, k] = u, v
            k += 1
            if nu * nv <= eps * np.sqrt(norm2):
                break
            au = np.abs(u)
            au[used_rows] = -1.0
            i_piv = int(np.argmax(au))
            if au[i_piv] < 0:
                break
        if k >= cap and cap < min(m, n):
            raise RankCapExceeded(f"block {m}x{n} needs rank > {cap}")
        # verification on random columns
        jj = rng.choice(n, size=min(n_check, n), replace=False)
        res = get(rows, cols[jj]) - U[:, :k] @ V[jj, :k].T
        scale = max(np.sqrt(norm2), 1e-300)
        if np.linalg.norm(res) * np.sqrt(n / len(jj)) <= eps * scale or not np.any(res):
            break
        ii = np.unravel_index(int(np.argmax(np.abs(res))), res.shape)[0]
        if used_rows[ii] or k >= cap:
            break
        i_piv = int(ii)
    if k == 0:
        return np.zeros((m, 0), complex), np.zeros((n, 0), complex), 0
    U, V = _recompress(U[:, :k], V[:, :k], eps)
    return U, V, U.shape[1]


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    lu: tuple | None = None          # leaf: LU of the diagonal block
    W12: np.ndarray | None = None    # A[c1, c2] ~ U12 W12^T
    W21: np.ndarray | None = None    # A[c2, c1] ~ U21 W21^T
    Y1: np.ndarray | None = None     # A_c1^{-1} U12 (after factorization)
    Y2: np.ndarray | None = None     # A_c2^{-1} U21
    K: tuple | None = None           # LU of the coupling matrix


@dataclass
class HodlrFactor:
    ordering: Ordering
    eps: float
    nodes: list
    ranks: dict
    timings: dict

    @property
    def n(self) -> int:
        return self.ordering.n

    def max_rank(self, level: int | None = None) -> int:
        vals = [r for (lev, _), r in self.ranks.items() if level is None or lev == level]
        return max(vals) if vals else 0

    def memory_bytes(self) -> int:
        tot = 0
        for nd in self.nodes:
            for arr in (nd.W12, nd.W21, nd.Y1, nd.Y2):
                if arr is not None:
                    tot += arr.nbytes
            if nd.lu is not None:
                tot += nd.lu[0].nbytes
        return tot


def factor(get: EntryAccessor, ordering: Ordering, eps: float, *, max_rank: int | None = None,
           seed: int = 0, progress: Callable[[str], None] | None = None) -> HodlrFactor:
    """Compress and factor ``A`` given in original (global) index order."""
    perm = ordering.perm
    cl = ordering.clusters
    rng = np.random.default_rng(seed)
    nodes = [_Node() for _ in cl]
    ranks: dict = {}
    t0 = time.perf_counter()

    # compression of all off-diagonal blocks (U stored provisionally in Y)
    for k, c in enumerate(cl):
        if c.children is None:
            idx = perm[c.start:c.stop]
            A = get(idx, idx)
            nodes[k].lu = sla.lu_factor(A, check_finite=False)
            if np.any(np.diag(nodes[k].lu[0]) == 0):
                raise np.linalg.LinAlgError(f"singular leaf block in cluster {k}")
            continue
        a, b = (cl[i] for i in c.children)
        ia, ib = perm[a.start:a.stop], perm[b.start:b.stop]
        U12, W12, r12 = compress_block(get, ia, ib, eps, max_rank=max_rank, rng=rng)
        U21, W21, r21 = compress_block(get, ib, ia, eps, max_rank=max_rank, rng=rng)
        nodes[k].Y1, nodes[k].W12 = U12, W12
        nodes[k].Y2, nodes[k].W21 = U21, W21
        ranks[(c.level, k)] = max(r12, r21)
    t1 = time.perf_counter()
    if progress:
        progress(f"compressed {len(ranks)} block pairs, max rank {max(ranks.values(), default=0)}")

    ancestors = _ancestor_slices(ordering)
    # leaves: apply the diagonal inverse to every ancestor factor
    for k in ordering.leaves():
        for arr, sl in _targets(nodes, ancestors[k]):
            arr[sl] = sla.lu_solve(nodes[k].lu, arr[sl], check_finite=False)
    # upward sweep
    levels = ordering.by_level()
    for lev in range(ordering.depth - 1, -1, -1):
        for k in levels[lev]:
            nd = nodes[k]
            if cl[k].children is None:
                continue
            r1, r2 = nd.Y1.shape[1], nd.Y2.shape[1]
            Kmat = np.eye(r1 + r2, dtype=complex)
            Kmat[:r1, r1:] = nd.W12.T @ nd.Y2
            Kmat[r1:, :r1] = nd.W21.T @ nd.Y1
            nd.K = sla.lu_factor(Kmat, check_finite=False) if r1 + r2 else None
            if nd.K is None:
                continue
            n1 = cl[cl[k].children[0]].size
            for arr, sl in _targets(nodes, ancestors[k]):
                Z = arr[sl]
                s = _coupling_solve(nd, Z[:n1], Z[n1:])
                Z[:n1] -= nd.Y1 @ s[:r1]
                Z[n1:] -= nd.Y2 @ s[r1:]
    t2 = time.perf_counter()
    return HodlrFactor(ordering=ordering, eps=eps, nodes=nodes, ranks=ranks,
                       timings={"compress": t1 - t0, "factor": t2 - t1})


def _coupling_solve(nd: _Node, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    z = np.concatenate([nd.W12.T @ x2, nd.W21.T @ x1], axis=0)
    return sla.lu_solve(nd.K, z, check_finite=False)


def _ancestor_slices(ordering: Ordering) -> list[list[tuple[int, int, slice]]]:
    """For each cluster: (ancestor, side, row slice within that side's factor)."""
    cl = ordering.clusters
    out = []
    for k, c in enumerate(cl):
        lst = []
        child, p = k, c.parent
        while p >= 0:
            side = 0 if cl[p].children[0] == child else 1
            base = cl[cl[p].children[side]].start
            lst.append((p, side, slice(c.start - base, c.stop - base)))
            child, p = p, cl[p].parent
        out.append(lst)
    return out


def _targets(nodes, anc):
    for p, side, sl in anc:
        arr = nodes[p].Y1 if side == 0 else nodes[p].Y2
        if arr is not None and arr.shape[1]:
            yield arr, sl


def solve(fac: HodlrFactor, rhs: np.ndarray) -> np.ndarray:
    """Apply the factored inverse to one or more right-hand sides."""
    rhs = np.asarray(rhs)
    if rhs.shape[0] != fac.n:
        raise ValueError(f"rhs has length {rhs.shape[0]}, expected {fac.n}")
    perm = fac.ordering.perm
    cl = fac.ordering.clusters
    x = np.array(rhs[perm], dtype=complex)
    for k in fac.ordering.leaves():
        c = cl[k]
        x[c.start:c.stop] = sla.lu_solve(fac.nodes[k].lu, x[c.start:c.stop], check_finite=False)
    levels = fac.ordering.by_level()
    for lev in range(fac.ordering.depth - 1, -1, -1):
        for k in levels[lev]:
            nd = fac.nodes[k]
            if cl[k].children is None or nd.K is None:
                continue
            c = cl[k]
            n1 = cl[c.children[0]].size
            r1 = nd.Y1.shape[1]
            seg = x[c.start:c.stop]
            s = _coupling_solve(nd, seg[:n1], seg[n1:])
            seg[:n1] -= nd.Y1 @ s[:r1]
            seg[n1:] -= nd.Y2 @ s[r1:]
    out = np.empty_like(x)
    out[perm] = x
    return out


# ---------------------------------------------------------------------------
# reference solver and certificates
# ---------------------------------------------------------------------------

def dense_solve(get: EntryAccessor, n: int, rhs: np.ndarray, *, max_n: int = 20_000,
                chunk: int = 512) -> np.ndarray:
    """Assemble ``A`` explicitly and solve with partial pivoting."""
    if n > max_n:
        raise MemoryError(f"dense solve refused: N={n} exceeds the guard {max_n}")
    idx = np.arange(n)
    A = np.empty((n, n), dtype=complex)
    for a in range(0, n, chunk):
        A[a:a + chunk] = get(idx[a:a + chunk], idx)
    return sla.solve(A, np.asarray(rhs, dtype=complex), check_finite=False)


def sampled_residual(get: EntryAccessor, x: np.ndarray, rhs: np.ndarray, n_rows: int = 200,
                     seed: int = 0) -> float:
    """``max |A x - b| / max |b|`` over randomly sampled rows."""
    n = len(x)
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=min(n_rows, n), replace=False))
    idx = np.arange(n)
    res = 0.0
    for a in range(0, len(rows), 16):
        r = rows[a:a + 16]
        res = max(res, float(np.max(np.abs(get(r, idx) @ x - rhs[r]))))
    scale = float(np.max(np.abs(rhs)))
    return res / scale if scale > 0 else res
