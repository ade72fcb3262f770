"""Command line entry point: ``ls2d solve | study | tables``.

Every flag may also be given in a config file (``--config FILE``) as
``key = value`` lines using the flag names without dashes; ``eval`` may be
repeated.  Command-line flags override the file.

Exit codes: 0 success, 2 configuration error, 3 numerical refusal.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .driver import (PROBLEMS, NumericalRefusal, PipelineError, ProblemSpec, convergence_study,
                     emit_field_csv, run)
from .entries import default_cache_dir
from .quadgen import RELATIONS, load_or_build_table

logger = logging.getLogger("ls2d")

EXIT_OK, EXIT_CONFIG, EXIT_REFUSAL = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def _floats(text: str, n: int, what: str) -> tuple[float, ...]:
    parts = [s for s in text.replace(" ", "").split(",") if s]
    if len(parts) != n:
        raise ConfigError(f"{what} expects {n} comma-separated numbers, got {text!r}")
    try:
        return tuple(float(s) for s in parts)
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _ladder(text: str) -> tuple[str, list]:
    kind, _, values = text.partition(":")
    if kind not in ("level", "eps") or not values:
        raise ConfigError("ladder must look like 'level:4,5,6' or 'eps:1e-4,1e-5'")
    conv = int if kind == "level" else float
    try:
        return kind, [conv(v) for v in values.split(",") if v]
    except ValueError as exc:
        raise ConfigError(f"ladder: {exc}") from None


_SAFE_NAMES = {name: getattr(np, name) for name in (
    "exp", "sin", "cos", "tanh", "sqrt", "abs", "where", "pi", "hypot", "arctan2", "log")}


def _expression_contrast(expr: str):
    """Contrast from a numpy expression in ``x`` and ``y`` (no builtins available)."""
    code = compile(expr, "<q-expr>", "eval")
    bad = [n for n in code.co_names if n not in _SAFE_NAMES and n not in ("x", "y")]
    if bad:
        raise ConfigError(f"q-expr uses unsupported names: {', '.join(bad)}")

    def q(x, y):
        val = eval(code, {"__builtins__": {}}, {**_SAFE_NAMES, "x": x, "y": y})
        return np.broadcast_to(np.asarray(val, dtype=float), np.broadcast(x, y).shape)

    return q


def read_config(path) -> dict[str, list[str]]:
    """``key = value`` lines; ``#`` starts a comment; repeated keys accumulate."""
    out: dict[str, list[str]] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        out.setdefault(key.strip().replace("_", "-"), []).append(value.strip())
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file with the same keys as the flags")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--q-expr", help="contrast for --problem custom, numpy expression in x, y")
    p.add_argument("--kappa", type=float)
    p.add_argument("--p", type=int)
    p.add_argument("--ppw", type=float, help="wavelength refinement parameter M")
    p.add_argument("--eps", type=float, help="data-resolution tolerance")
    p.add_argument("--level", type=int, help="uniform grid with 4**level leaves")
    p.add_argument("--max-level", type=int, help="stop data-driven refinement at this level")
    p.add_argument("--solver", choices=("hodlr", "dense"))
    p.add_argument("--hodlr-tol", type=float)
    p.add_argument("--domain", help="cx,cy,side")
    p.add_argument("--eval", action="append", help="x,y (repeatable)")
    p.add_argument("--grid", help="nx,ny")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--table-cache", help="directory for near-field tables")
    p.add_argument("--threads", type=int, help="BLAS thread count")
    p.add_argument("--timing", action="store_true", help="report stage timings")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ls2d", description="Lippmann-Schwinger scattering solver")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve one scattering problem")
    _common(s)
    st = sub.add_parser("study", help="convergence study over a ladder of grids")
    _common(st)
    st.add_argument("--ladder", help="'level:4,5,6' (uniform) or 'eps:1e-4,1e-5' (adaptive)")
    t = sub.add_parser("tables", help="build or verify the near-field table cache")
    t.add_argument("--p", type=int, default=4)
    t.add_argument("--pmax", type=int, default=60)
    t.add_argument("--table-cache", help="cache directory")
    t.add_argument("--timing", action="store_true")
    t.add_argument("-v", "--verbose", action="count", default=0)
    return ap


_FLAG_KEYS = ("problem", "q-expr", "kappa", "p", "ppw", "eps", "level", "max-level",
              "solver", "hodlr-tol", "domain", "eval", "grid", "seed", "out",
              "table-cache", "threads", "timing", "ladder")


def _merge(args: argparse.Namespace) -> dict:
    """Flag values over config-file values, as strings or parsed flag types."""
    merged: dict = {}
    if getattr(args, "config", None):
        for key, values in read_config(args.config).items():
            if key not in _FLAG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = values if key == "eval" else values[-1]
    for key in _FLAG_KEYS:
        val = getattr(args, key.replace("-", "_"), None)
        if val not in (None, False):
            merged[key] = val
    return merged


def spec_from_options(opts: dict) -> ProblemSpec:
    """Translate merged options into a validated :class:`ProblemSpec`."""
    def get(key, conv, default=None):
        if key not in opts:
            return default
        try:
            return conv(opts[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from None

    kw = {}
    problem = get("problem", str, "gaussian")
    kw["problem"] = problem
    if problem == "custom":
        if "q-expr" not in opts:
            raise ConfigError("--problem custom needs --q-expr")
        kw["custom_q"] = _expression_contrast(str(opts["q-expr"]))
    for key, name, conv in (("kappa", "kappa", float), ("p", "p", int), ("ppw", "M_ppw", float),
                            ("eps", "eps_data", float), ("level", "level", int),
                            ("max-level", "data_level_cap", int),
                            ("solver", "solver", str), ("hodlr-tol", "eps_h", float),
                            ("seed", "seed", int), ("out", "out", str),
                            ("table-cache", "table_cache", str)):
        v = get(key, conv)
        if v is not None:
            kw[name] = v
    if "domain" in opts:
        kw["domain"] = _floats(str(opts["domain"]), 3, "domain")
    if "grid" in opts:
        g = _floats(str(opts["grid"]), 2, "grid")
        if any(v != int(v) for v in g):
            raise ConfigError("grid counts must be integers")
        kw["grid"] = (int(g[0]), int(g[1]))
    evals = opts.get("eval") or []
    if isinstance(evals, str):
        evals = [evals]
    kw["eval_points"] = [_floats(e, 2, "eval") for e in evals]
    try:
        return ProblemSpec(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _cmd_solve(opts: dict, spec: ProblemSpec) -> int:
    bundle = run(spec)
    summary = bundle.summary()
    if bundle.hodlr_memory is not None:
        summary["hodlr_memory_mb"] = bundle.hodlr_memory / 2 ** 20
    summary["eval"] = [
        {"x": float(x), "y": float(y), "u": [float(u.real), float(u.imag)],
         "uscat": [float(s.real), float(s.imag)]}
        for (x, y), u, s in zip(bundle.eval_points, bundle.u_eval, bundle.uscat_eval)]
    if not opts.get("timing"):
        summary = {k: v for k, v in summary.items() if not k.startswith("t_")}
    print(json.dumps(summary, indent=2))
    if spec.out:
        which = "grid" if spec.grid is not None else "eval"
        path = emit_field_csv(bundle, spec.out, which=which)
        logger.info("wrote %s", path)
    return EXIT_OK


def _cmd_study(opts: dict, spec: ProblemSpec) -> int:
    if "ladder" not in opts:
        raise ConfigError("study needs --ladder")
    kind, ladder = _ladder(str(opts["ladder"]))
    if not spec.eval_points:
        raise ConfigError("study needs at least one --eval point")
    report = convergence_study(spec, ladder, kind=kind,
                               progress=lambda m: logger.info("%s", m))
    print(report.format())
    if spec.out:
        report.to_csv(spec.out)
    return EXIT_OK


def _cmd_tables(args: argparse.Namespace) -> int:
    import time
    cache = args.table_cache or default_cache_dir()
    for split in (False, True):
        for rel in RELATIONS:
            t0 = time.perf_counter()
            tab = load_or_build_table(rel, args.p, args.pmax, split, cache)
            msg = f"{rel:9s} split={int(split)} targets={tab.n_targets}"
            if args.timing:
                msg += f" {time.perf_counter() - t0:.2f}s"
            print(msg)
    print(f"cache: {cache}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "tables":
            if args.p != 4:
                raise ConfigError("only p = 4 tables are supported")
            return _cmd_tables(args)
        opts = _merge(args)
        spec = spec_from_options(opts)
        threads = opts.get("threads")
        if threads is not None:
            from threadpoolctl import threadpool_limits
            threadpool_limits(int(threads))
        if args.command == "solve":
            return _cmd_solve(opts, spec)
        return _cmd_study(opts, spec)
    except ConfigError as exc:
        print(f"ls2d: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalRefusal as exc:
        print(f"ls2d: numerical refusal in stage {exc}", file=sys.stderr)
        return EXIT_REFUSAL
    except PipelineError as exc:
        print(f"ls2d: configuration error in stage {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
