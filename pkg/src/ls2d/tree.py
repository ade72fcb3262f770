"""Adaptive, level-restricted quad-tree over a square domain.

Boxes are addressed by integer lattice coordinates ``(level, ix, iy)`` with
``0 <= ix, iy < 2**level``, which makes every adjacency test exact.  A box is
split when the wavelength rule (``kappa * L >= 2 pi M``), the table-range rule
(``kappa * L > 8``) or the data-resolution test on ``q`` and ``f`` asks for it;
afterwards the tree is refined until neighbouring leaves differ by at most one
level.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np

from .interp import chebyshev_nodes, tensor_cheb_interp, unit_grid

logger = logging.getLogger(__name__)

__all__ = [
    "BoxGeom",
    "TreeNode",
    "TreeParams",
    "QuadTree",
    "NeighborLists",
    "TreeRefinementError",
    "MalformedTreeError",
    "build_tree",
    "build_uniform_tree",
    "enforce_level_restriction",
    "is_level_restricted",
    "classify_neighbors",
    "leaf_grid_points",
    "resolution_test",
    "COARSE_SLOTS",
    "FINE_SLOTS",
    "SEPFINE_SLOTS",
]

TABLE_ZMAX = 8.0
CHILD_OFFSETS = ((0, 0), (1, 0), (1, 1), (0, 1))

# Lower-left corner of the neighbour box relative to the lower-left corner of
# the source box, in units of the source side.  Slot order follows the usual
# figures: counter-clockwise from the lower-left.
COARSE_SLOTS = ((-2, -2), (-1, -2), (0, -2), (1, -2), (1, -1), (1, 0),
                (1, 1), (0, 1), (-1, 1), (-2, 1), (-2, 0), (-2, -1))
FINE_SLOTS = ((-0.5, -0.5), (0, -0.5), (0.5, -0.5), (1, -0.5), (1, 0), (1, 0.5),
              (1, 1), (0.5, 1), (0, 1), (-0.5, 1), (-0.5, 0.5), (-0.5, 0))
SEPFINE_SLOTS = tuple(
    ((cx - 2) / 2, (cy - 2) / 2)
    for cx, cy in [(i, 0) for i in range(5)] + [(5, i) for i in range(5)]
    + [(5 - i, 5) for i in range(5)] + [(0, 5 - i) for i in range(5)]
)


class TreeRefinementError(RuntimeError):
    """Refinement exceeded the maximum level; the data is not resolvable."""


class MalformedTreeError(ValueError):
    """The tree violates an invariant required by the caller."""


@dataclass(frozen=True)
class BoxGeom:
    center: tuple[float, float]
    side: float
    level: int = 0

    @property
    def lower(self) -> tuple[float, float]:
        h = 0.5 * self.side
        return (self.center[0] - h, self.center[1] - h)


@dataclass
class TreeNode:
    level: int
    ix: int
    iy: int
    parent: int | None = None
    children: tuple[int, ...] = ()
    leaf_index: int | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class TreeParams:
    """Refinement parameters.

    ``eps_data = None`` disables the data-resolution rule; ``min_level``
    forces a uniform base level (uniform grids use ``min_level`` alone).
    ``data_level_cap`` stops data-driven refinement at that level, for data
    with jumps that no polynomial resolves.
    """

    p: int = 4
    M_ppw: float = 1.0
    eps_data: float | None = 1e-6
    kappa: float = 1.0
    max_level: int = 30
    min_level: int = 0
    max_leaves: int = 1 << 20
    data_level_cap: int | None = None


@dataclass
class NeighborLists:
    colleagues: list[int] = field(default_factory=list)
    coarse: list[int] = field(default_factory=list)
    fine: list[int] = field(default_factory=list)
    separated_fine: list[int] = field(default_factory=list)


@dataclass
class QuadTree:
    domain: BoxGeom
    params: TreeParams
    nodes: list[TreeNode]
    index: dict[tuple[int, int, int], int]
    leaves: list[int] = field(default_factory=list)

    # -- geometry -------------------------------------------------------
    def side(self, level: int) -> float:
        return self.domain.side / 2.0 ** level

    def geom(self, node_id: int) -> BoxGeom:
        nd = self.nodes[node_id]
        h = self.side(nd.level)
        x0, y0 = self.domain.lower
        return BoxGeom(center=(x0 + (nd.ix + 0.5) * h, y0 + (nd.iy + 0.5) * h),
                       side=h, level=nd.level)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_points(self) -> int:
        return self.n_leaves * self.params.p ** 2

    @property
    def max_level(self) -> int:
        return max(self.nodes[i].level for i in self.leaves)

    # -- lookup ---------------------------------------------------------
    def node_at(self, level: int, ix: int, iy: int) -> int | None:
        return self.index.get((level, ix, iy))

    def leaf_containing(self, level: int, ix: int, iy: int) -> int | None:
        """Leaf covering lattice box ``(level, ix, iy)``, or the box itself if it is not a leaf."""
        n = 1 << level
        if not (0 <= ix < n and 0 <= iy < n):
            return None
        for k in range(level, -1, -1):
            s = level - k
            nid = self.index.get((k, ix >> s, iy >> s))
            if nid is not None:
                if k == level or self.nodes[nid].is_leaf:
                    return nid
                return None
        return None

    def leaf_arrays(self) -> dict[str, np.ndarray]:
        """Per-leaf arrays (level, ix, iy, centre, side) in leaf order."""
        lv = np.array([self.nodes[i].level for i in self.leaves], dtype=np.int64)
        ix = np.array([self.nodes[i].ix for i in self.leaves], dtype=np.int64)
        iy = np.array([self.nodes[i].iy for i in self.leaves], dtype=np.int64)
        side = self.domain.side / 2.0 ** lv
        x0, y0 = self.domain.lower
        centers = np.column_stack([x0 + (ix + 0.5) * side, y0 + (iy + 0.5) * side])
        return {"level": lv, "ix": ix, "iy": iy, "side": side, "center": centers}

    def dump(self) -> str:
        """One line per node: ``level cx cy side is_leaf leaf_index``."""
        lines = []
        for nid, nd in enumerate(self.nodes):
            g = self.geom(nid)
            li = -1 if nd.leaf_index is None else nd.leaf_index
            lines.append(f"{nd.level} {g.center[0]!r} {g.center[1]!r} {g.side!r} "
                         f"{int(nd.is_leaf)} {li}")
        return "\n".join(lines) + "\n"

    # -- mutation (construction only) -------------------------------------
    def _split(self, nid: int) -> list[int]:
        nd = self.nodes[nid]
        if nd.children:
            return list(nd.children)
        kids = []
        for dx, dy in CHILD_OFFSETS:
            kid = TreeNode(level=nd.level + 1, ix=2 * nd.ix + dx, iy=2 * nd.iy + dy, parent=nid)
            self.nodes.append(kid)
            kid_id = len(self.nodes) - 1
            self.index[(kid.level, kid.ix, kid.iy)] = kid_id
            kids.append(kid_id)
        nd.children = tuple(kids)
        return kids

    def _renumber(self) -> None:
        self.leaves = [i for i, nd in enumerate(self.nodes) if nd.is_leaf]
        for nd in self.nodes:
            nd.leaf_index = None
        for k, nid in enumerate(self.leaves):
            self.nodes[nid].leaf_index = k


def _new_tree(domain: BoxGeom, params: TreeParams) -> QuadTree:
    root = TreeNode(level=0, ix=0, iy=0)
    dom = BoxGeom(center=tuple(map(float, domain.center)), side=float(domain.side), level=0)
    return QuadTree(domain=dom, params=params, nodes=[root], index={(0, 0, 0): 0})


def _cheb_points(geom: BoxGeom, p: int) -> np.ndarray:
    return np.asarray(geom.center) + geom.side * _unit_cheb(p)


@lru_cache(maxsize=None)
def _unit_cheb(p: int) -> np.ndarray:
    g = chebyshev_nodes(p)
    x1, x2 = np.meshgrid(g, g, indexing="xy")
    return np.column_stack([x1.ravel(), x2.ravel()])


@lru_cache(maxsize=None)
def _child_sampling(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Parent and child Chebyshev nodes in unit coordinates, and the matrix
    mapping parent-node values to the parent interpolant at child nodes."""
    parent = _unit_cheb(p)
    kids = np.concatenate([0.5 * parent + 0.25 * np.array([2 * dx - 1, 2 * dy - 1])
                           for dx, dy in CHILD_OFFSETS])
    E = np.empty((len(kids), p * p))
    eye = np.eye(p * p)
    for k in range(p * p):
        E[:, k] = tensor_cheb_interp(eye[k], p, kids[:, 0], kids[:, 1])
    pts = np.concatenate([parent, kids])
    pts.setflags(write=False)
    E.setflags(write=False)
    return pts, E


def resolution_test(geom: BoxGeom, g: Callable, p: int, eps: float) -> bool:
    """True when the order-``p`` tensor Chebyshev interpolant of ``g`` on the box
    matches ``g`` at the Chebyshev nodes of the four children.

    The tolerance is relative: ``eps * max(1, max |g|)`` over all sampled nodes.
    """
    pts, E = _child_sampling(p)
    xy = np.asarray(geom.center) + geom.side * pts
    vals = np.asarray(g(xy[:, 0], xy[:, 1]))
    n = p * p
    err = np.max(np.abs(vals[n:] - E @ vals[:n]))
    return bool(err <= eps * max(1.0, np.max(np.abs(vals))))


def _needs_split(tree: QuadTree, nid: int, fields: Iterable[Callable]) -> bool:
    prm = tree.params
    nd = tree.nodes[nid]
    L = tree.side(nd.level)
    if nd.level < prm.min_level:
        return True
    zL = prm.kappa * L
    if zL >= 2 * np.pi * prm.M_ppw or zL > TABLE_ZMAX:
        return True
    if prm.eps_data is None:
        return False
    if prm.data_level_cap is not None and nd.level >= prm.data_level_cap:
        return False
    geom = tree.geom(nid)
    return not all(resolution_test(geom, g, prm.p, prm.eps_data) for g in fields)


def _refine(tree: QuadTree, work: deque, fields) -> None:
    prm = tree.params
    while work:
        nid = work.popleft()
        if not tree.nodes[nid].is_leaf:
            continue
        if _needs_split(tree, nid, fields):
            # every split adds three leaves to the single root leaf
            if (len(tree.nodes) - 1) // 4 * 3 + 1 >= prm.max_leaves:
                raise TreeRefinementError(
                    f"refinement exceeded {prm.max_leaves} leaves; "
                    "contrast or right-hand side is not resolvable at eps_data")
            if tree.nodes[nid].level >= prm.max_level:
                g = tree.geom(nid)
                raise TreeRefinementError(
                    f"refinement exceeded max level {prm.max_level} near {g.center}; "
                    "contrast or right-hand side is not resolvable at eps_data")
            work.extend(tree._split(nid))


def _restriction_pass(tree: QuadTree) -> list[int]:
    """Split every leaf that is more than one level coarser than a touching leaf."""
    split = []
    by_level = sorted((nid for nid, nd in enumerate(tree.nodes) if nd.is_leaf),
                      key=lambda i: -tree.nodes[i].level)
    for nid in by_level:
        nd = tree.nodes[nid]
        if not nd.is_leaf or nd.level < 2:
            continue
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                other = tree.leaf_containing(nd.level, nd.ix + dx, nd.iy + dy)
                if other is None:
                    continue
                od = tree.nodes[other]
                if od.is_leaf and od.level < nd.level - 1:
                    split.extend(tree._split(other))
    return split


def is_level_restricted(tree: QuadTree) -> bool:
    for nid in tree.leaves if tree.leaves else range(len(tree.nodes)):
        nd = tree.nodes[nid]
        if not nd.is_leaf:
            continue
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                other = tree.leaf_containing(nd.level, nd.ix + dx, nd.iy + dy)
                if other is not None and tree.nodes[other].is_leaf \
                        and tree.nodes[other].level < nd.level - 1:
                    return False
    return True


def enforce_level_restriction(tree: QuadTree, fields: Iterable[Callable] = ()) -> QuadTree:
    """Refine (never coarsen) until touching leaves differ by at most one level.

    Newly created leaves are passed back through the refinement rules so that
    wavelength and data invariants continue to hold.
    """
    fields = tuple(fields)
    while True:
        new = _restriction_pass(tree)
        if not new:
            break
        if fields or tree.params.min_level:
            _refine(tree, deque(new), fields)
    tree._renumber()
    return tree


def build_tree(domain: BoxGeom, q: Callable | None, f: Callable | None,
               params: TreeParams) -> QuadTree:
    """Adaptive level-restricted tree resolving ``q`` and ``f``.

    ``q`` and ``f`` are vectorised callables ``g(x, y)``; ``None`` means
    identically zero.
    """
    if params.p < 4 or params.p % 2:
        raise ValueError("p must be an even integer >= 4")
    if params.kappa <= 0:
        raise ValueError("kappa must be positive")
    if params.eps_data is not None and params.eps_data <= 0:
        raise ValueError("eps_data must be positive")
    tree = _new_tree(domain, params)
    fields = tuple(g for g in (q, f) if g is not None)
    _refine(tree, deque([0]), fields)
    enforce_level_restriction(tree, fields)
    logger.info("tree: %d leaves, max level %d", tree.n_leaves, tree.max_level)
    return tree


def build_uniform_tree(domain: BoxGeom, level: int, p: int = 4, kappa: float = 1.0) -> QuadTree:
    """Uniform tree with ``4**level`` leaves (no wavelength or data checks).

    Raises ``ValueError`` when the leaves are too large for the near-field
    tables (``kappa * L > 8``).
    """
    if kappa * domain.side / 2.0 ** level > TABLE_ZMAX * (1 + 1e-12):
        raise ValueError(f"uniform level {level} gives kappa*L = {kappa * domain.side / 2 ** level:.3g}"
                         f" > {TABLE_ZMAX:g}; use a finer level or a smaller domain")
    params = TreeParams(p=p, M_ppw=np.inf, eps_data=None, kappa=kappa,
                        min_level=level, max_level=max(level, 30))
    tree = _new_tree(domain, params)
    _refine(tree, deque([0]), ())
    tree._renumber()
    return tree


def tree_from_leaves(domain: BoxGeom, leaves: Iterable[tuple[int, int, int]],
                     params: TreeParams | None = None) -> QuadTree:
    """Build the minimal tree whose leaf set contains the given lattice boxes.

    Used for hand-made configurations in tests.
    """
    params = params or TreeParams(eps_data=None, M_ppw=np.inf)
    tree = _new_tree(domain, params)
    for level, ix, iy in sorted(leaves):
        for k in range(level):
            s = level - k
            nid = tree.index[(k, ix >> s, iy >> s)]
            tree._split(nid)
    tree._renumber()
    return tree


def _touch(a: TreeNode, b: TreeNode) -> bool:
    lv = max(a.level, b.level)
    sa, sb = 1 << (lv - a.level), 1 << (lv - b.level)
    ax0, ay0, bx0, by0 = a.ix * sa, a.iy * sa, b.ix * sb, b.iy * sb
    return (ax0 <= bx0 + sb and bx0 <= ax0 + sa and ay0 <= by0 + sb and by0 <= ay0 + sa)


def classify_neighbors(tree: QuadTree, leaf_id: int) -> NeighborLists:
    """Colleague, coarse, fine and separated-fine lists of a leaf (node ids)."""
    nd = tree.nodes[leaf_id]
    if not nd.is_leaf:
        raise ValueError(f"node {leaf_id} is not a leaf")
    out = NeighborLists()
    coarse = set()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            cid = tree.node_at(nd.level, nd.ix + dx, nd.iy + dy)
            if cid is not None:
                out.colleagues.append(cid)
                for kid in tree.nodes[cid].children:
                    kn = tree.nodes[kid]
                    if not kn.is_leaf:
                        continue
                    if _touch(kn, nd):
                        out.fine.append(kid)
                    else:
                        out.separated_fine.append(kid)
                continue
            other = tree.leaf_containing(nd.level, nd.ix + dx, nd.iy + dy)
            if other is None:
                continue
            on = tree.nodes[other]
            if on.level == nd.level - 1:
                coarse.add(other)
            elif on.level < nd.level - 1:
                raise MalformedTreeError(
                    f"leaf {other} at level {on.level} touches leaf {leaf_id} at level "
                    f"{nd.level}; tree is not level-restricted")
    out.coarse = sorted(coarse)
    return out


def leaf_grid_points(tree: QuadTree, leaf_id: int) -> np.ndarray:
    """Physical coordinates of the ``p*p`` grid points of a leaf.

    Global unknown index of local point ``j`` on leaf ``m`` is ``m * p**2 + j``.
    """
    g = tree.geom(leaf_id)
    return np.asarray(g.center) + g.side * unit_grid(tree.params.p)


def all_grid_points(tree: QuadTree) -> np.ndarray:
    """Grid points of every leaf in global-index order, shape ``(N, 2)``."""
    la = tree.leaf_arrays()
    ug = unit_grid(tree.params.p)
    pts = la["center"][:, None, :] + la["side"][:, None, None] * ug[None]
    return pts.reshape(-1, 2)
