"""Problem registry and end-to-end pipeline.

A :class:`ProblemSpec` names a contrast, a domain and the discretization and
solver settings.  :func:`run` goes tree -> entry context -> factorization ->
solve -> field evaluation and returns a :class:`SolutionBundle`;
:func:`convergence_study` repeats that over a ladder of grids and compares
against the radial reference or, for contrasts without one, against the
finest rung.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .entries import EntryContext, accessor, apply_volume, build_context, plane_wave
from .hodlr import (HodlrFactor, RankCapExceeded, build_ordering, dense_solve, factor,
                    sampled_residual, solve)
from .oracle import RadialProblem, radial_reference
from .tree import (BoxGeom, MalformedTreeError, QuadTree, TreeParams, TreeRefinementError,
                   build_tree, build_uniform_tree)

logger = logging.getLogger(__name__)

__all__ = [
    "PROBLEMS",
    "ProblemSpec",
    "SolutionBundle",
    "StudyReport",
    "PipelineError",
    "NumericalRefusal",
    "contrast",
    "radial_problem",
    "multibump_centers",
    "run",
    "convergence_study",
    "emit_field_csv",
]

PROBLEMS = ("gaussian", "flatbump", "multibump", "plasma", "custom")

MULTIBUMP_COUNT = 20
MULTIBUMP_WIDTH = 0.0013
MULTIBUMP_BOX = 1.5

PLASMA_C = 0.4987
# (a_j, x_j, y_j) of the five density bumps
PLASMA_BUMPS = np.array([
    [0.45, 0.80, 0.00],
    [0.195, 0.54, -0.28],
    [0.51, -0.14, 0.70],
    [0.195, -0.50, -0.01],
    [0.63, 0.18, 0.80],
])

# The plasma contrast switches on with a jump of the bump term along the
# boundary curve, so data refinement is capped there (leaf side 3/2^7).
PLASMA_LEVEL_CAP = 7

DEFAULT_DOMAINS = {
    "gaussian": (0.0, 0.0, 4.0),
    "flatbump": (0.0, 0.0, 4.0),
    "multibump": (0.0, 0.0, 4.0),
    "plasma": (0.0, 0.0, 3.0),
    "custom": (0.0, 0.0, 1.0),
}
# support radius of the radially symmetric contrasts (q below 1e-17 outside)
RADIAL_SUPPORT = {"gaussian": 0.5, "flatbump": 1.6}


class PipelineError(RuntimeError):
    """A module error annotated with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class NumericalRefusal(PipelineError):
    """The numerics declined the problem (rank cap, unresolvable data, ...)."""


_REFUSALS = (RankCapExceeded, TreeRefinementError, MalformedTreeError, np.linalg.LinAlgError,
             MemoryError)


# ---------------------------------------------------------------------------
# contrasts
# ---------------------------------------------------------------------------

def multibump_centers(seed: int, count: int = MULTIBUMP_COUNT,
                      half_width: float = MULTIBUMP_BOX) -> np.ndarray:
    """Bump centres drawn uniformly from ``[-h, h]^2`` by ``numpy.random.default_rng(seed)``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-half_width, half_width, size=(count, 2))


def _gaussian(x, y):
    return 1.5 * np.exp(-160.0 * (x * x + y * y))


def _flatbump(x, y):
    return 0.5 * special.erfc(5.0 * (x * x + y * y - 1.0))


def _multibump(seed: int):
    centers = multibump_centers(seed)

    def q(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for cx, cy in centers:
            out += 1.5 * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / MULTIBUMP_WIDTH)
        return out

    return q


def _plasma(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = 1.0 - (x - 0.15 * (1.0 - x * x)) ** 2 - PLASMA_C * (1.0 + 0.3 * x) ** 2 * y * y
    g = np.zeros(np.broadcast(x, y).shape)
    for a, xj, yj in PLASMA_BUMPS:
        g += a * np.exp(-((x - xj) ** 2 + (y - yj) ** 2) / 0.01)
    inside = -1.5 * (shape - 0.05) - g * np.cos(0.9 * y)
    return np.where(shape > 0.05, inside, 0.0)


def contrast(problem: str, seed: int = 0, custom: Callable | None = None) -> Callable:
    """Vectorized contrast ``q(x, y)`` of a registered problem."""
    if problem == "gaussian":
        return _gaussian
    if problem == "flatbump":
        return _flatbump
    if problem == "multibump":
        return _multibump(seed)
    if problem == "plasma":
        return _plasma
    if problem == "custom":
        if custom is None:
            raise ValueError("problem 'custom' needs a contrast callable")
        return custom
    raise ValueError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")


def radial_problem(problem: str, kappa: float) -> RadialProblem | None:
    """Separation-of-variables reference for the radially symmetric contrasts."""
    if problem == "gaussian":
        return RadialProblem(lambda r: 1.5 * np.exp(-160.0 * r * r), RADIAL_SUPPORT[problem], kappa)
    if problem == "flatbump":
        return RadialProblem(lambda r: 0.5 * special.erfc(5.0 * (r * r - 1.0)),
                             RADIAL_SUPPORT[problem], kappa)
    return None


# ---------------------------------------------------------------------------
# specification and results
# ---------------------------------------------------------------------------

@dataclass
class ProblemSpec:
    """Configuration of one scattering run.

    ``level`` selects a uniform grid with ``4**level`` leaves; otherwise the
    tree is adaptive, driven by ``M_ppw`` and ``eps_data`` (data refinement
    optionally stopped at ``data_level_cap``).  ``eps_h`` defaults to
    ``eps_data * 1e-4``.
    """

    problem: str = "gaussian"
    domain: tuple[float, float, float] | None = None
    kappa: float = 40.0
    p: int = 4
    M_ppw: float = 1.0
    eps_data: float = 1e-6
    level: int | None = None
    solver: str = "hodlr"
    eps_h: float | None = None
    seed: int = 0
    eval_points: list[tuple[float, float]] = field(default_factory=list)
    grid: tuple[int, int] | None = None
    out: str | None = None
    table_cache: str | None = None
    data_level_cap: int | None = None
    custom_q: Callable | None = field(default=None, repr=False)
    incident_amplitude: complex = 1.0

    def __post_init__(self):
        if self.domain is None:
            self.domain = DEFAULT_DOMAINS.get(self.problem, (0.0, 0.0, 1.0))
        if self.data_level_cap is None and self.problem == "plasma":
            # the contrast jumps across the cut-off curve; see PLASMA_LEVEL_CAP
            self.data_level_cap = PLASMA_LEVEL_CAP
        self.domain = tuple(float(v) for v in self.domain)
        self.validate()

    def validate(self) -> None:
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; expected one of {PROBLEMS}")
        if self.problem == "custom" and self.custom_q is None:
            raise ValueError("problem 'custom' needs custom_q")
        if len(self.domain) != 3 or self.domain[2] <= 0:
            raise ValueError("domain must be (cx, cy, side) with side > 0")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.p != 4:
            raise ValueError("only p = 4 tables are supported")
        if not self.M_ppw > 0 or not self.eps_data > 0:
            raise ValueError("M_ppw and eps_data must be positive")
        if self.data_level_cap is not None and self.data_level_cap < 0:
            raise ValueError("data_level_cap must be non-negative")
        if self.level is not None and self.level < 0:
            raise ValueError("level must be non-negative")
        if self.solver not in ("hodlr", "dense"):
            raise ValueError("solver must be 'hodlr' or 'dense'")
        if self.eps_h is not None and not self.eps_h > 0:
            raise ValueError("eps_h must be positive")
        if self.grid is not None and (len(self.grid) != 2 or min(self.grid) < 0):
            raise ValueError("grid must be (nx, ny) with non-negative counts")

    @property
    def hodlr_tol(self) -> float:
        return self.eps_h if self.eps_h is not None else self.eps_data * 1e-4

    @property
    def geom(self) -> BoxGeom:
        cx, cy, side = self.domain
        return BoxGeom((cx, cy), side, 0)

    def q(self) -> Callable:
        return contrast(self.problem, self.seed, self.custom_q)

    def grid_points(self) -> np.ndarray:
        """Output grid, row-major (``x`` fastest), spanning the closed domain."""
        if self.grid is None or 0 in self.grid:
            return np.empty((0, 2))
        nx, ny = self.grid
        cx, cy, side = self.domain
        xs = cx + side * (np.linspace(-0.5, 0.5, nx) if nx > 1 else np.zeros(1))
        ys = cy + side * (np.linspace(-0.5, 0.5, ny) if ny > 1 else np.zeros(1))
        X, Y = np.meshgrid(xs, ys)
        return np.column_stack([X.ravel(), Y.ravel()])

    def replace(self, **changes) -> "ProblemSpec":
        return dataclasses.replace(self, **changes)


@dataclass
class SolutionBundle:
    spec: ProblemSpec
    n: int
    n_leaves: int
    max_level: int
    psi: np.ndarray
    residual: float
    timings: dict[str, float]
    eval_points: np.ndarray
    u_eval: np.ndarray
    uscat_eval: np.ndarray
    grid_points: np.ndarray
    u_grid: np.ndarray
    uscat_grid: np.ndarray
    hodlr_max_rank: int | None = None
    hodlr_memory: int | None = None
    context: EntryContext | None = field(default=None, repr=False)

    def summary(self) -> dict:
        return {
            "problem": self.spec.problem,
            "N": self.n,
            "leaves": self.n_leaves,
            "max_level": self.max_level,
            "residual": self.residual,
            "hodlr_max_rank": self.hodlr_max_rank,
            **{f"t_{k}": v for k, v in self.timings.items()},
        }


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except _REFUSALS as exc:
        raise NumericalRefusal(name, exc) from exc
    except (ValueError, OSError) as exc:
        raise PipelineError(name, exc) from exc


def _build_tree(spec: ProblemSpec, q: Callable) -> QuadTree:
    if spec.level is not None:
        return build_uniform_tree(spec.geom, spec.level, p=spec.p, kappa=spec.kappa)
    k = spec.kappa

    # right-hand side without its kappa^2 factor: the resolution test has an
    # absolute floor, which would otherwise tighten by kappa^2
    def f(x, y):
        return q(x, y) * np.exp(1j * k * x)

    params = TreeParams(p=spec.p, M_ppw=spec.M_ppw, eps_data=spec.eps_data, kappa=k,
                        data_level_cap=spec.data_level_cap)
    return build_tree(spec.geom, q, f, params)


def run(spec: ProblemSpec, *, keep_context: bool = False) -> SolutionBundle:
    """Solve one scattering problem and sample the field."""
    timings: dict[str, float] = {}
    q = spec.q()

    t0 = time.perf_counter()
    tree = _stage("tree", _build_tree, spec, q)
    timings["tree"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ctx = _stage("tables", build_context, tree, spec.kappa, q, cache_dir=spec.table_cache)
    if spec.incident_amplitude != 1.0:
        ctx = ctx.with_contrast(ctx.q, spec.incident_amplitude * ctx.f)
    timings["tables"] = time.perf_counter() - t0
    logger.info("%s: N=%d, leaves=%d, levels %d..%d", spec.problem, ctx.n, ctx.n_leaves,
                int(ctx.leaf_level.min()), int(ctx.leaf_level.max()))

    get = accessor(ctx)
    rank = mem = None
    if not np.any(ctx.f):
        psi = np.zeros(ctx.n, dtype=complex)
        timings["factor"] = timings["solve"] = 0.0
    elif spec.solver == "dense":
        t0 = time.perf_counter()
        psi = _stage("solve", dense_solve, get, ctx.n, ctx.f)
        timings["factor"] = 0.0
        timings["solve"] = time.perf_counter() - t0
    else:
        t0 = time.perf_counter()
        order = build_ordering(ctx.leaf_center, ctx.pp, points=ctx.points)
        fac: HodlrFactor = _stage("factor", factor, get, order, spec.hodlr_tol)
        timings["factor"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        psi = _stage("solve", solve, fac, ctx.f)
        timings["solve"] = time.perf_counter() - t0
        rank, mem = fac.max_rank(), fac.memory_bytes()

    t0 = time.perf_counter()
    residual = sampled_residual(get, psi, ctx.f) if np.any(ctx.f) else 0.0
    ev = np.asarray(spec.eval_points, dtype=float).reshape(-1, 2)
    gp = spec.grid_points()
    targets = np.concatenate([ev, gp])
    uscat = _stage("post", apply_volume, ctx, psi, targets)
    u = spec.incident_amplitude * plane_wave(spec.kappa, targets) + uscat
    timings["post"] = time.perf_counter() - t0

    ne = len(ev)
    return SolutionBundle(
        spec=spec, n=ctx.n, n_leaves=ctx.n_leaves, max_level=int(ctx.leaf_level.max()),
        psi=psi, residual=float(residual), timings=timings,
        eval_points=ev, u_eval=u[:ne], uscat_eval=uscat[:ne],
        grid_points=gp, u_grid=u[ne:], uscat_grid=uscat[ne:],
        hodlr_max_rank=rank, hodlr_memory=mem, context=ctx if keep_context else None)


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

FIELD_HEADER = ("x", "y", "re_u", "im_u", "re_uscat", "im_uscat")


def emit_field_csv(bundle: SolutionBundle, path, *, which: str = "grid") -> Path:
    """Write sampled fields as CSV with 17 significant digits.

    ``which="grid"`` writes the output grid (row-major, ``x`` fastest);
    ``which="eval"`` writes the evaluation points.
    """
    if which == "grid":
        pts, u, us = bundle.grid_points, bundle.u_grid, bundle.uscat_grid
    elif which == "eval":
        pts, u, us = bundle.eval_points, bundle.u_eval, bundle.uscat_eval
    else:
        raise ValueError("which must be 'grid' or 'eval'")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(FIELD_HEADER)
        for (x, y), a, b in zip(pts, u, us):
            w.writerow([f"{v:.17g}" for v in (x, y, a.real, a.imag, b.real, b.imag)])
    return path


def read_field_csv(path) -> np.ndarray:
    """Parse a field CSV back into an ``(n, 6)`` float array."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != FIELD_HEADER:
        raise ValueError(f"unexpected header {rows[0]}")
    return np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, 6)


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

@dataclass
class StudyReport:
    """One row per rung: unknowns, error per evaluation point, wall time."""

    problem: str
    ladder_kind: str
    rungs: list
    n: list[int]
    errors: np.ndarray
    times: list[float]
    reference: str
    eval_points: np.ndarray
    values: np.ndarray = field(repr=False, default=None)

    @property
    def ratios(self) -> np.ndarray:
        """Successive error ratios ``e_k / e_{k+1}`` (rows: rungs, cols: points)."""
        e = np.asarray(self.errors)
        return e[:-1] / e[1:] if len(e) > 1 else np.empty((0, e.shape[1]))

    @property
    def order(self) -> np.ndarray | None:
        """Observed order in the mesh width, ``log(e_k / e_{k+1}) / log(h_k / h_{k+1})``.

        Uses ``h ~ N^(-1/2)``; ``None`` for a single rung.
        """
        if len(self.n) < 2:
            return None
        n = np.asarray(self.n, dtype=float)
        return np.log(self.ratios) / (0.5 * np.log(n[1:] / n[:-1]))[:, None]

    def rows(self) -> list[list]:
        out = []
        for k, rung in enumerate(self.rungs):
            out.append([rung, self.n[k], *self.errors[k], self.times[k]])
        return out

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([self.ladder_kind, "N",
                        *[f"err({x:g},{y:g})" for x, y in self.eval_points], "time_s"])
            for r in self.rows():
                w.writerow([r[0], r[1], *[f"{v:.6e}" for v in r[2:-1]], f"{r[-1]:.3f}"])
        return path

    def format(self) -> str:
        head = f"{self.ladder_kind:>8} {'N':>8} " + " ".join(
            f"{'e(%g,%g)' % tuple(p):>12}" for p in self.eval_points) + f" {'time':>9}"
        lines = [head]
        for r in self.rows():
            lines.append(f"{r[0]!s:>8} {r[1]:>8d} " + " ".join(f"{v:12.4e}" for v in r[2:-1])
                         + f" {r[-1]:9.2f}")
        if self.order is not None and self.ladder_kind == "level":
            lines.append("observed order: " + " | ".join(
                " ".join(f"{v:5.2f}" for v in row) for row in self.order))
        lines.append(f"reference: {self.reference}")
        return "\n".join(lines)


def convergence_study(spec: ProblemSpec, ladder: Sequence, *, kind: str = "level",
                      progress: Callable[[str], None] | None = None) -> StudyReport:
    """Run ``spec`` over a ladder of uniform levels (``kind="level"``) or data
    tolerances (``kind="eps"``) and tabulate errors at ``spec.eval_points``.

    Radially symmetric contrasts are compared with the separation-of-variables
    reference; other contrasts with the finest rung.
    """
    if kind not in ("level", "eps"):
        raise ValueError("kind must be 'level' or 'eps'")
    if not spec.eval_points:
        raise ValueError("a convergence study needs evaluation points")
    ladder = list(ladder)
    if not ladder:
        raise ValueError("empty ladder")
    pts = np.asarray(spec.eval_points, dtype=float).reshape(-1, 2)
    values, ns, times = [], [], []
    for rung in ladder:
        s = spec.replace(level=int(rung)) if kind == "level" else \
            spec.replace(level=None, eps_data=float(rung))
        s = s.replace(grid=None)
        t0 = time.perf_counter()
        b = run(s)
        times.append(time.perf_counter() - t0)
        values.append(b.u_eval)
        ns.append(b.n)
        if progress:
            progress(f"{kind}={rung} N={b.n} time={times[-1]:.1f}s")
    values = np.array(values)
    rp = radial_problem(spec.problem, spec.kappa)
    if rp is not None and spec.incident_amplitude == 1.0:
        ref = radial_reference(rp, pts)
        errors = np.abs(values - ref[None, :])
        reference = "radial separation of variables"
    else:
        errors = np.abs(values - values[-1][None, :])[:-1] if len(values) > 1 else \
            np.full((1, len(pts)), np.nan)
        reference = "finest rung (self-convergence)"
        if len(values) > 1:
            ladder, ns, times = ladder[:-1], ns[:-1], times[:-1]
    return StudyReport(problem=spec.problem, ladder_kind=kind, rungs=ladder, n=ns,
                       errors=errors, times=times, reference=reference, eval_points=pts,
                       values=values)


def richardson_order(values: np.ndarray) -> np.ndarray:
    """Order estimate from three successive dyadic rungs, per evaluation point."""
    v = np.asarray(values)
    if len(v) < 3:
        raise ValueError("need three rungs")
    return np.log2(np.abs(v[-3] - v[-2]) / np.abs(v[-2] - v[-1]))
