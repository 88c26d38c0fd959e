"""Command-line front end: ``hdlogit fit | simulate | grid``.

Exit codes: 0 on success, 2 on usage or data errors (including an
unwritable output path), 3 when the requested estimator fails.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .data import load_csv
from .errors import DataError, EstimationError
from .estimators import PipelineConfig, estimate
from .inference import test_alpha
from .simulate import (
    DEFAULT_METHODS,
    METHOD_ROWS,
    DgpSpec,
    grid_cells,
    r2_values,
    run_grid,
    run_monte_carlo,
)

log = logging.getLogger("hdlogit")

EXIT_OK, EXIT_DATA, EXIT_SOLVER = 0, 2, 3
CSV_FIELDS = ("design", "n", "p", "alpha0", "r2d", "r2y", "method", "reps", "bias",
              "variance", "rmse", "rp", "failure_rate", "seed")
_DESIGN_ALIASES = {"sparse": "sparse_decline", "sparse_decline": "sparse_decline",
                   "approx": "approx_quadratic", "approx_quadratic": "approx_quadratic"}


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _xi(text: str) -> float:
    v = float(text)
    if not (0.0 < v <= 0.5):
        raise argparse.ArgumentTypeError("xi must lie in (0, 0.5]")
    return v


def _design(text: str) -> str:
    try:
        return _DESIGN_ALIASES[text]
    except KeyError:
        raise argparse.ArgumentTypeError(
            f"unknown design {text!r}; choose from {sorted(_DESIGN_ALIASES)}") from None


def _methods(text: str) -> tuple[str, ...]:
    out = tuple(m.strip() for m in text.split(",") if m.strip())
    bad = [m for m in out if m not in METHOD_ROWS]
    if bad or not out:
        raise argparse.ArgumentTypeError(
            f"unknown method(s) {bad}; choose from {sorted(METHOD_ROWS)}")
    return out


def _float_list(text: str) -> list[float]:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _r2_grid(text: str) -> list[float]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected lo:hi:step")
    try:
        lo, hi, step = (float(t) for t in parts)
        vals = r2_values(lo, hi, step)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not all(0.0 <= v < 1.0 for v in vals):
        raise argparse.ArgumentTypeError("R^2 values must lie in [0, 1)")
    return vals


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--penalty-rule", choices=("caption", "hoeffding"), default="caption")
    g.add_argument("--gamma", type=float, default=0.05,
                   help="penalty confidence parameter (default 0.05)")
    g.add_argument("--search-constant", type=float, default=PipelineConfig.search_constant,
                   help="C in the search interval |a - a_tilde| <= C / log n")
    g.add_argument("--grid-points", type=int, default=PipelineConfig.grid_points)
    g.add_argument("--h0-mode", action="store_true", help="use unit weights f = 1 in Step 2")
    g.add_argument("--unpenalized-treatment", action="store_true",
                   help="leave the treatment unpenalised in Step 1")


def _config(args) -> PipelineConfig:
    try:
        return PipelineConfig(penalty_rule=args.penalty_rule, gamma=args.gamma,
                              penalize_treatment=not args.unpenalized_treatment,
                              search_constant=args.search_constant, h0_mode=args.h0_mode,
                              grid_points=args.grid_points)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdlogit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hdlogit {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="estimate the treatment coefficient on a CSV file")
    f.add_argument("data", help="CSV file with a header row")
    f.add_argument("--outcome", required=True)
    f.add_argument("--treatment", required=True)
    f.add_argument("--controls", default=None,
                   help="comma-separated control columns (default: all remaining)")
    f.add_argument("--no-intercept", action="store_true")
    f.add_argument("--method", choices=sorted(METHOD_ROWS), default="double-selection")
    f.add_argument("--xi", type=_xi, default=0.05)
    f.add_argument("--alpha0", type=float, default=0.0, help="null value for the reported test")
    f.add_argument("--seed", type=int, default=0,
                   help="echoed for provenance; the fit itself is deterministic")
    f.add_argument("--out", default="-")
    _add_pipeline_flags(f)

    for name, helptext in (("simulate", "Monte Carlo for one design"),
                           ("grid", "Monte Carlo over an (alpha0, R^2_d, R^2_y) grid")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--design", type=_design, default="sparse_decline")
        s.add_argument("--n", type=_positive_int, default=200)
        s.add_argument("--p", type=_positive_int, default=250)
        s.add_argument("--rho", type=float, default=0.5)
        s.add_argument("--reps", type=_positive_int, default=1000)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--xi", type=_xi, default=0.05)
        s.add_argument("--methods", type=_methods, default=DEFAULT_METHODS)
        s.add_argument("--jobs", type=_positive_int, default=None,
                       help="worker processes (capped by HDLOGIT_THREADS)")
        s.add_argument("--out", default="-")
        if name == "simulate":
            s.add_argument("--alpha0", type=float, default=0.2)
            s.add_argument("--r2d", type=float, default=0.75)
            s.add_argument("--r2y", type=float, default=0.75)
        else:
            s.add_argument("--alpha0-list", type=_float_list, default=[0.0, 0.25, 0.5])
            s.add_argument("--r2-grid", type=_r2_grid, default=r2_values(0.0, 0.9, 0.1))
            s.add_argument("--resume", action="store_true",
                           help="skip cells already present in the checkpoint file")
        _add_pipeline_flags(s)
    return parser


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in sorted(x.items(), key=lambda kv: str(kv[0]))}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer, int)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _check_writable(out: str) -> None:
    if out == "-":
        return
    path = Path(out)
    parent = path.parent if str(path.parent) else Path(".")
    if path.is_dir():
        raise UsageError(f"output path {out} is a directory")
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise UsageError(f"cannot write output to {out}")
    if path.exists() and not os.access(path, os.W_OK):
        raise UsageError(f"cannot write output to {out}")


def _write_text(out: str, text: str) -> None:
    if out == "-":
        sys.stdout.write(text)
        return
    tmp = f"{out}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, out)


def cmd_fit(args) -> int:
    config = _config(args)
    _check_writable(args.out)
    controls = None if args.controls is None else [c.strip() for c in args.controls.split(",")]
    ds = load_csv(args.data, args.outcome, args.treatment, controls,
                  add_intercept=not args.no_intercept)
    name, kind = METHOD_ROWS[args.method]
    est = estimate(ds, methods=(name,), config=config)
    if name in est.failures:
        exc = est.failures[name]
        raise EstimationError(f"{args.method} failed: {type(exc).__name__}: {exc}") from exc
    res = est.results[name]
    prof = est.profiles.get(name)
    outcome = test_alpha(res, prof, kind, args.alpha0, args.xi)
    region = outcome.region
    lo, hi = region.hull
    sds = est.dataset
    names = sds.names or tuple(f"x{j}" for j in range(sds.p))
    step1 = [names[j] for j in est.step1.support] if est.step1 else []
    step2 = [names[j] for j in est.step2.support] if est.step2 else []
    doc = {
        "method": args.method,
        "alpha_check": res.alpha_check,
        "std_err": res.std_err,
        "ci_lo": lo,
        "ci_hi": hi,
        "region_kind": region.kind,
        "intervals": [list(iv) for iv in region.intervals],
        "sigma1_sq": res.sigma1_sq,
        "sigma2_sq": res.sigma2_sq,
        "support_step1": step1,
        "support_step2": step2,
        "test": {"alpha0": args.alpha0, "xi": args.xi, "statistic": outcome.statistic,
                 "reject": outcome.reject},
        "diagnostics": res.diagnostics,
        "config_echo": {
            "data": str(args.data), "outcome": args.outcome, "treatment": args.treatment,
            "controls": list(sds.names or ()), "intercept": not args.no_intercept,
            "n": sds.n, "p": sds.p, "method": args.method, "xi": args.xi,
            "alpha0": args.alpha0, "seed": args.seed, "version": __version__,
            "pipeline": asdict(config),
            "lambda1": config.lambda1(sds.n, sds.p), "lambda2": config.lambda2(sds.n, sds.p),
        },
    }
    doc = {k: _jsonable(v) if k != "diagnostics" else _jsonable(dict(v)) for k, v in doc.items()}
    _write_text(args.out, json.dumps(doc, indent=2, allow_nan=False) + "\n")
    return EXIT_OK


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([_fmt(r[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def _run_config(args, config: PipelineConfig, extra: dict) -> dict:
    cap = os.environ.get("HDLOGIT_THREADS")
    return {"command": args.command, "version": __version__, "design": args.design,
            "n": args.n, "p": args.p, "rho": args.rho, "reps": args.reps, "seed": args.seed,
            "xi": args.xi, "methods": list(args.methods), "pipeline": asdict(config),
            "lambda1": config.lambda1(args.n, args.p), "lambda2": config.lambda2(args.n, args.p),
            "jobs": args.jobs, "HDLOGIT_THREADS": cap, **extra}


def _write_sidecar(out: str, cfg: dict) -> None:
    text = json.dumps(_jsonable(cfg), indent=2) + "\n"
    if out == "-":
        log.info("effective configuration: %s", json.dumps(_jsonable(cfg), sort_keys=True))
        return
    _write_text(f"{out}.config.json", text)


def _flag_invalid(summaries) -> None:
    for s in summaries:
        for label, m in s.methods.items():
            if not m.valid:
                log.warning("cell alpha0=%g r2d=%g r2y=%g: %s failure rate %.3f > 0.20 (invalid)",
                            s.spec.alpha0, s.spec.r2_d, s.spec.r2_y, label, m.failure_rate)


def cmd_simulate(args) -> int:
    config = _config(args)
    _check_writable(args.out)
    try:
        spec = DgpSpec(n=args.n, p=args.p, alpha0=args.alpha0, rho=args.rho,
                       design=args.design, r2_d=args.r2d, r2_y=args.r2y)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = _run_config(args, config, {"alpha0": args.alpha0, "r2d": args.r2d, "r2y": args.r2y,
                                     "c_d": spec.c_d, "c_y": spec.c_y})
    _write_sidecar(args.out, cfg)
    summary = run_monte_carlo(spec, args.methods, args.reps, args.xi, args.seed,
                              args.jobs, config)
    _flag_invalid([summary])
    _write_text(args.out, rows_to_csv(summary.rows()))
    return EXIT_OK


def _read_checkpoint(path: str, methods) -> tuple[list[dict], set]:
    rows: list[dict] = []
    if not os.path.exists(path):
        return rows, set()
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.append(r)
    seen: dict[tuple, set] = {}
    for r in rows:
        cell = (float(r["alpha0"]), float(r["r2d"]), float(r["r2y"]))
        seen.setdefault(cell, set()).add(r["method"])
    done = {cell for cell, ms in seen.items() if set(methods) <= ms}
    rows = [r for r in rows if (float(r["alpha0"]), float(r["r2d"]), float(r["r2y"])) in done]
    return rows, done


def cmd_grid(args) -> int:
    config = _config(args)
    _check_writable(args.out)
    cells = grid_cells(args.alpha0_list, args.r2_grid)
    cfg = _run_config(args, config, {"alpha0_list": args.alpha0_list,
                                     "r2_grid": args.r2_grid, "cells": len(cells)})
    cfg_cmp = {k: v for k, v in _jsonable(cfg).items() if k not in ("jobs", "HDLOGIT_THREADS")}
    checkpoint = None if args.out == "-" else f"{args.out}.partial"
    done_rows: list[dict] = []
    done: set = set()
    if args.resume and checkpoint is not None:
        sidecar = f"{args.out}.config.json"
        if os.path.exists(sidecar):
            with open(sidecar, encoding="utf-8") as fh:
                old = {k: v for k, v in json.load(fh).items()
                       if k not in ("jobs", "HDLOGIT_THREADS")}
            if old != cfg_cmp:
                raise UsageError("--resume: configuration differs from the checkpointed run")
        done_rows, done = _read_checkpoint(checkpoint, args.methods)
        log.info("resuming: %d of %d cells already done", len(done), len(cells))
    _write_sidecar(args.out, cfg)

    by_cell: dict[tuple, list] = {}
    for r in done_rows:
        by_cell.setdefault((float(r["alpha0"]), float(r["r2d"]), float(r["r2y"])), []).append(r)

    def ordered_rows():
        out = []
        for cell in cells:
            out.extend(by_cell.get(cell, []))
        return out

    def on_cell(cell, summary):
        by_cell[cell] = summary.rows()
        log.info("cell alpha0=%g r2d=%g r2y=%g done", *cell)
        if checkpoint is not None:
            _write_text(checkpoint, rows_to_csv(ordered_rows()))

    try:
        summaries = run_grid(args.alpha0_list, args.r2_grid, design=args.design,
                             reps=args.reps, seed=args.seed, n=args.n, p=args.p, rho=args.rho,
                             methods=args.methods, xi=args.xi, parallelism=args.jobs,
                             config=config, skip=done, on_cell=on_cell)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _flag_invalid(summaries)
    text = rows_to_csv(ordered_rows())
    # rows read back from a checkpoint are strings; normalise through float repr
    text = rows_to_csv([_normalise(r) for r in csv.DictReader(io.StringIO(text))])
    _write_text(args.out, text)
    if checkpoint is not None and os.path.exists(checkpoint):
        os.remove(checkpoint)
    return EXIT_OK


_INT_FIELDS = ("n", "p", "reps", "seed")
_STR_FIELDS = ("design", "method")


def _normalise(row: dict) -> dict:
    out = {}
    for k in CSV_FIELDS:
        v = row[k]
        if k in _STR_FIELDS:
            out[k] = v
        elif k in _INT_FIELDS:
            out[k] = int(v)
        else:
            out[k] = float(v)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handler = {"fit": cmd_fit, "simulate": cmd_simulate, "grid": cmd_grid}[args.command]
    try:
        return handler(args)
    except (UsageError, DataError) as exc:
        print(f"hdlogit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"hdlogit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"hdlogit {args.command}: estimation failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
