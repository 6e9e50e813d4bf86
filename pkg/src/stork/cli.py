"""Command-line front end.

Subcommands cover single solves, the stiff-scalar demonstration, stability
scans, convergence studies, method-by-budget error sweeps, and coefficient
dumps.  Every run writes one machine-readable file (CSV or JSON) whose header
echoes the package version, a hash of the fully resolved configuration, and
the coefficient-table checksum, so identical configs produce byte-identical
outputs.  Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
import tempfile
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (
    empirical_order,
    real_stability_extent,
    stability_region_scan,
    stiffness_demo,
)
from .coefficients import rkg2_coeffs, rock4_coeffs, table_checksum
from .errors import ConfigurationError
from .fields import (
    SemiLinearNoiseModel,
    make_gaussian_flow,
    make_gaussian_vp,
    make_linear_system,
    make_stiff_scalar,
    vp_alpha_bar,
    vp_sigma,
)
from .stepper import (
    METHODS,
    NOISE_METHODS,
    SolverConfig,
    TimeGrid,
    solve_flow,
    solve_noise,
)

#: environment variable naming the default output directory
OUTPUT_DIR_ENV = "STORK_OUTPUT_DIR"

PROBLEMS = ("gaussian-flow", "gaussian-vp", "linear-system", "stiff-scalar")


# ---------------------------------------------------------------------------
# parsing helpers


def _float_list(text: str) -> list:
    try:
        return [float(p) for p in text.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise ConfigurationError(f"bad numeric list {text!r}: {exc}") from None


def _int_list(text: str) -> list:
    try:
        return [int(p) for p in text.split(",") if p.strip() != ""]
    except ValueError as exc:
        raise ConfigurationError(f"bad integer list {text!r}: {exc}") from None


def _matrix(text: str) -> np.ndarray:
    rows = [_float_list(r) for r in text.split(";")]
    if len(set(len(r) for r in rows)) != 1:
        raise ConfigurationError(f"matrix {text!r} has ragged rows")
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ConfigurationError(f"matrix {text!r} is not square")
    return arr


def _format_value(v) -> str:
    """Stable scalar formatting for CSV cells."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _resolve_output(path: Optional[str], command: str, fmt: str) -> str:
    if path is None:
        base = os.environ.get(OUTPUT_DIR_ENV, ".")
        path = os.path.join(base, f"{command}.{fmt}")
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise ConfigurationError(f"output directory does not exist: {parent}")
    return path


def _atomic_write(path: str, text: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=parent, prefix=".stork-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_report(
    path: str,
    fmt: str,
    columns: Sequence[str],
    rows: Sequence[Sequence],
    config: dict,
    metadata: Optional[dict] = None,
) -> None:
    """Serialize one run's table plus reproducibility header, atomically."""
    metadata = dict(metadata or {})
    header = {
        "version": __version__,
        "config_hash": _config_hash(config),
        "table_checksum": table_checksum(),
    }
    if fmt == "csv":
        lines = [f"# {k}={v}" for k, v in header.items()]
        lines.append(
            "# config=" + json.dumps(config, sort_keys=True, separators=(",", ":"))
        )
        for k in sorted(metadata):
            lines.append(f"# {k}={_format_value(metadata[k])}")
        lines.append(",".join(columns))
        for row in rows:
            lines.append(",".join(_format_value(v) for v in row))
        _atomic_write(path, "\n".join(lines) + "\n")
    elif fmt == "json":
        doc = dict(header)
        doc["config"] = config
        doc["metadata"] = {k: metadata[k] for k in sorted(metadata)}
        doc["columns"] = list(columns)
        def cell(v):
            if isinstance(v, str):
                return v
            if isinstance(v, (int, np.integer)):
                return int(v)
            return float(v)

        doc["rows"] = [[cell(v) for v in row] for row in rows]
        _atomic_write(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    else:
        raise ConfigurationError(f"unknown output format {fmt!r}")


# ---------------------------------------------------------------------------
# problem construction


def _build_problem(args):
    name = args.problem
    if name == "gaussian-flow":
        return make_gaussian_flow(np.array(args.mu1), args.s1)
    if name == "gaussian-vp":
        return make_gaussian_vp(np.array(args.mu0), args.s0)
    if name == "linear-system":
        return make_linear_system(_matrix(args.matrix))
    if name == "stiff-scalar":
        return make_stiff_scalar(args.lam)
    raise ConfigurationError(
        f"unknown problem {name!r}; expected one of {PROBLEMS}"
    )


def _default_span(args) -> tuple:
    """(t_lo, t_hi) honoring flags, with noise problems avoiding t = 0, 1."""
    is_noise = args.problem == "gaussian-vp"
    t_lo = args.t_lo if args.t_lo is not None else (args.epsilon_floor if is_noise else 0.0)
    t_hi = args.t_hi if args.t_hi is not None else (0.9 if is_noise else 1.0)
    if not t_hi > t_lo:
        raise ConfigurationError("t_hi must exceed t_lo")
    return t_lo, t_hi


def _marginal(problem_name: str, args, t: float) -> tuple:
    """(mean, std) of the analytic marginal at time t, for seeding."""
    if problem_name == "gaussian-flow":
        mu = np.array(args.mu1)
        std = math.sqrt((1.0 - t) ** 2 + (t * args.s1) ** 2)
        return t * mu, std
    if problem_name == "gaussian-vp":
        mu = np.array(args.mu0)
        ab, sg = vp_alpha_bar(t), vp_sigma(t)
        return ab * mu, math.sqrt((ab * args.s0) ** 2 + sg**2)
    dim = 1 if problem_name == "stiff-scalar" else _matrix(args.matrix).shape[0]
    return np.zeros(dim), 1.0


def _initial_states(problem_name, args, t_hi: float) -> np.ndarray:
    mean, std = _marginal(problem_name, args, t_hi)
    rng = np.random.default_rng(args.seed)
    return mean + std * rng.standard_normal((args.batch, mean.size))


def _grid(args, t_lo: float, t_hi: float, steps: int) -> TimeGrid:
    if args.schedule == "uniform":
        return TimeGrid.uniform(t_lo, t_hi, steps)
    if args.schedule == "flow-shift":
        return TimeGrid.flow_shift(t_lo, t_hi, steps, shift=args.shift)
    raise ConfigurationError(f"unknown schedule {args.schedule!r}")


def _solver_config(args, method: Optional[str] = None) -> SolverConfig:
    return SolverConfig(
        method=method or args.method,
        substeps=args.substeps,
        taylor_order=args.taylor_order,
        substage_mode=args.substage_mode,
        strict_degree=args.strict_degree,
    )


def _steps_for_budget(budget: int, method: str) -> int:
    """Invert the NFE accounting: budget B -> super-step count M."""
    m = budget - 3 if method in NOISE_METHODS else budget - 1
    if m < 1:
        raise ConfigurationError(f"NFE budget {budget} too small for {method}")
    return m


def _run_one_solve(problem, grid, config, x_init, tweedie: bool):
    """One solve, dispatched on problem kind; returns (report, endpoint, error)."""
    if isinstance(problem.field, SemiLinearNoiseModel):
        report = solve_noise(x_init, grid, problem.field, config, tweedie=tweedie)
        endpoint = report.trajectory[0]
    else:
        report = solve_flow(x_init, grid, problem.field, config)
        endpoint = report.final_state
    reference = problem.oracle(x_init, grid.points[-1], grid.points[0])
    err = float(np.max(np.abs(endpoint - reference)))
    return report, endpoint, err


# ---------------------------------------------------------------------------
# subcommands


def _resolved_config(args, keys: Sequence[str]) -> dict:
    cfg = {"command": args.command}
    for k in keys:
        cfg[k] = getattr(args, k)
    return cfg


_SOLVE_KEYS = (
    "problem", "mu0", "s0", "mu1", "s1", "lam", "matrix",
    "steps", "nfe", "schedule", "shift", "epsilon_floor", "t_lo", "t_hi",
    "method", "substeps", "taylor_order", "substage_mode", "strict_degree",
    "batch", "seed", "tweedie", "format",
)


def _cmd_solve(args) -> int:
    problem = _build_problem(args)
    is_noise = isinstance(problem.field, SemiLinearNoiseModel)
    method = args.method
    if method is None:
        method = "stork4_noise" if is_noise else "stork2"
        args.method = method
    if is_noise != (method in NOISE_METHODS):
        raise ConfigurationError(
            f"method {method!r} does not match problem kind "
            f"({'noise' if is_noise else 'flow'})"
        )
    if args.nfe is not None:
        args.steps = _steps_for_budget(args.nfe, method)
    t_lo, t_hi = _default_span(args)
    grid = _grid(args, t_lo, t_hi, args.steps)
    config = _solver_config(args, method)
    states = _initial_states(args.problem, args, t_hi)

    columns = ["batch", "t"] + [f"x{i}" for i in range(states.shape[1])]
    rows, errs, nfes = [], [], []
    for b in range(states.shape[0]):
        report, endpoint, err = _run_one_solve(
            problem, grid, config, states[b], args.tweedie
        )
        errs.append(err)
        nfes.append(report.nfe)
        for t, x in zip(grid.points[::-1], report.trajectory[::-1]):
            rows.append([b, t] + list(np.atleast_1d(x)))

    cfg = _resolved_config(args, _SOLVE_KEYS)
    meta = {
        "nfe": nfes[0],
        "substeps_used": report.substeps_used,
        "endpoint_error_max": max(errs),
        "endpoint_error_mean": sum(errs) / len(errs),
    }
    path = _resolve_output(args.output, "solve", args.format)
    write_report(path, args.format, columns, rows, cfg, meta)
    print(path)
    return 0


_DEMO_KEYS = ("lam", "steps", "format")


def _cmd_demo_stiff(args) -> int:
    demo = stiffness_demo(lam=args.lam, steps=args.steps)
    columns = ["t", "exact", "euler", "heun", "rkg2_s4"]
    rows = [
        [demo.times[i], demo.exact[i], demo.euler[i], demo.heun[i], demo.rkg2_s4[i]]
        for i in range(demo.times.size)
    ]
    meta = {}
    for name, v in demo.max_errors.items():
        meta[f"max_error_{name}"] = v
    for name, v in demo.terminal_errors.items():
        meta[f"terminal_error_{name}"] = v
    cfg = _resolved_config(args, _DEMO_KEYS)
    path = _resolve_output(args.output, "demo-stiff", args.format)
    write_report(path, args.format, columns, rows, cfg, meta)
    print(path)
    return 0


_STABILITY_KEYS = ("method", "substeps", "bounds", "resolution", "format")


def _cmd_stability(args) -> int:
    bounds = _float_list(args.bounds)
    resolution = _int_list(args.resolution)
    if len(bounds) != 4:
        raise ConfigurationError("bounds must be re_min,re_max,im_min,im_max")
    if len(resolution) != 2:
        raise ConfigurationError("resolution must be nx,ny")
    scan = stability_region_scan(args.method, args.substeps, bounds, resolution)
    extent = real_stability_extent(args.method, args.substeps)
    re = np.linspace(scan.re_min, scan.re_max, scan.nx)
    im = np.linspace(scan.im_min, scan.im_max, scan.ny)
    rows = []
    for iy in range(scan.ny):
        for ix in range(scan.nx):
            rows.append([re[ix], im[iy], scan.magnitudes[iy, ix]])
    meta = {
        "real_stability_extent": extent,
        "inside_fraction": scan.inside_fraction,
        "stable_area_estimate": scan.inside_count * scan.cell_area,
    }
    cfg = _resolved_config(args, _STABILITY_KEYS)
    path = _resolve_output(args.output, "stability", args.format)
    write_report(path, args.format, ["re", "im", "magnitude"], rows, cfg, meta)
    print(path)
    return 0


_CONV_KEYS = (
    "problem", "mu0", "s0", "mu1", "s1", "lam", "matrix", "step_counts",
    "method", "substeps", "taylor_order", "substage_mode", "strict_degree",
    "t_lo", "t_hi", "format",
)


def _cmd_convergence(args) -> int:
    problem = _build_problem(args)
    if isinstance(problem.field, SemiLinearNoiseModel):
        raise ConfigurationError("convergence studies run on flow problems")
    counts = _int_list(args.step_counts)
    t_lo = args.t_lo if args.t_lo is not None else 0.0
    t_hi = args.t_hi if args.t_hi is not None else 1.0
    report = empirical_order(
        problem, _solver_config(args), counts, t_lo=t_lo, t_hi=t_hi
    )
    span = t_hi - t_lo
    rows = [
        [int(m), span / m, e]
        for m, e in zip(report.step_counts, report.errors)
    ]
    meta = {
        "fitted_order": report.fitted_order,
        "r_squared": report.r_squared,
        "flagged": str(report.flagged).lower(),
        "excluded": json.dumps([list(x) for x in report.excluded]),
    }
    cfg = _resolved_config(args, _CONV_KEYS)
    path = _resolve_output(args.output, "convergence", args.format)
    write_report(path, args.format, ["steps", "h", "error"], rows, cfg, meta)
    print(path)
    return 0


_SWEEP_KEYS = (
    "problem", "mu0", "s0", "mu1", "s1", "lam", "matrix",
    "methods", "nfe_budgets", "schedule", "shift", "epsilon_floor",
    "t_lo", "t_hi", "substeps", "taylor_order", "substage_mode",
    "strict_degree", "seed", "tweedie", "workers", "format",
)


def _cmd_sweep(args) -> int:
    problem = _build_problem(args)
    is_noise = isinstance(problem.field, SemiLinearNoiseModel)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    budgets = _int_list(args.nfe_budgets)
    for m in methods:
        if m not in METHODS:
            raise ConfigurationError(f"unknown method {m!r}; expected one of {METHODS}")
        if is_noise != (m in NOISE_METHODS):
            raise ConfigurationError(
                f"method {m!r} does not match problem kind "
                f"({'noise' if is_noise else 'flow'})"
            )
    if not budgets:
        raise ConfigurationError("at least one NFE budget is required")
    t_lo, t_hi = _default_span(args)
    x_init = _initial_states(args.problem, args, t_hi)[0]

    cells = [(m, b) for m in methods for b in sorted(budgets)]

    def run_cell(cell):
        method, budget = cell
        try:
            steps = _steps_for_budget(budget, method)
            grid = _grid(args, t_lo, t_hi, steps)
            config = _solver_config(args, method)
            report, endpoint, err = _run_one_solve(
                problem, grid, config, x_init, args.tweedie
            )
            if not np.all(np.isfinite(endpoint)):
                return [method, budget, steps, float("nan"), "non-finite"]
            return [method, budget, steps, err, "ok"]
        except ConfigurationError as exc:
            return [method, budget, -1, float("nan"), f"invalid: {exc}"]

    workers = max(1, min(args.workers, len(cells)))
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run_cell, cells))

    cfg = _resolved_config(args, _SWEEP_KEYS)
    path = _resolve_output(args.output, "sweep", args.format)
    write_report(
        path, args.format, ["method", "nfe", "steps", "error", "status"],
        results, cfg,
    )
    print(path)
    return 0


_DUMP_KEYS = ("method", "substeps", "strict_degree", "format")


def _cmd_dump_coeffs(args) -> int:
    rows = []
    if args.method in ("stork2", "rkg2"):
        co = rkg2_coeffs(args.substeps)
        s = co.substeps
        rows.append(["w1", -1, co.w1])
        rows.append(["stability_extent", -1, co.stability_extent])
        for name, arr, lo in (
            ("a", co.a, 0), ("b", co.b, 0), ("c", co.c, 0),
            ("mu_tilde", co.mu_tilde, 1), ("mu", co.mu, 2),
            ("nu", co.nu, 2), ("gamma_tilde", co.gamma_tilde, 2),
        ):
            for j in range(lo, s + 1):
                rows.append([name, j, arr[j]])
    elif args.method in ("stork4", "rock4"):
        co = rock4_coeffs(args.substeps, strict=args.strict_degree)
        s = co.substeps
        rows.append(["stability_extent", -1, co.stability_extent])
        for j in range(s + 1):
            rows.append(["c", j, co.c[j]])
        for j in range(1, s + 1):
            rows.append(["mu", j, co.mu[j]])
        for j in range(2, s - 4 + 1):
            rows.append(["nu", j, co.nu[j]])
            rows.append(["kappa", j, co.kappa[j]])
    else:
        raise ConfigurationError(
            f"dump-coeffs supports the stabilized methods, not {args.method!r}"
        )
    cfg = _resolved_config(args, _DUMP_KEYS)
    meta = {"substeps_used": co.substeps}
    path = _resolve_output(args.output, "dump-coeffs", args.format)
    write_report(path, args.format, ["name", "index", "value"], rows, cfg, meta)
    print(path)
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def _add_output_flags(p):
    p.add_argument("--output", default=None, help="output file path")
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("--config", default=None,
                   help="JSON file of defaults using the flag names")


def _add_problem_flags(p):
    p.add_argument("--problem", default="linear-system", choices=PROBLEMS)
    p.add_argument("--mu0", type=_float_list, default=[2.0, 0.0],
                   help="data mean for gaussian-vp (comma list)")
    p.add_argument("--s0", type=float, default=0.5,
                   help="data standard deviation for gaussian-vp")
    p.add_argument("--mu1", type=_float_list, default=[2.0, 0.0],
                   help="target mean for gaussian-flow (comma list)")
    p.add_argument("--s1", type=float, default=0.5,
                   help="target standard deviation for gaussian-flow")
    p.add_argument("--lam", type=float, default=-20.0,
                   help="rate for stiff-scalar")
    p.add_argument("--matrix", default="0,-1;1,0",
                   help="rows ';'-separated, entries ','-separated")


def _add_grid_flags(p):
    p.add_argument("--schedule", default="uniform", choices=("uniform", "flow-shift"))
    p.add_argument("--shift", type=float, default=3.0)
    p.add_argument("--epsilon-floor", dest="epsilon_floor", type=float, default=1e-3)
    p.add_argument("--t-lo", dest="t_lo", type=float, default=None)
    p.add_argument("--t-hi", dest="t_hi", type=float, default=None)


def _add_solver_flags(p, default_method=None):
    p.add_argument("--method", default=default_method)
    p.add_argument("--substeps", type=int, default=9)
    p.add_argument("--taylor-order", dest="taylor_order", type=int,
                   default=3, choices=(2, 3))
    p.add_argument("--substage-mode", dest="substage_mode", default="taylor",
                   choices=("taylor", "exact"))
    p.add_argument("--strict-degree", dest="strict_degree", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stork",
        description="Stabilized Runge-Kutta sampling toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one solver on one problem")
    _add_problem_flags(p)
    _add_grid_flags(p)
    _add_solver_flags(p)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--nfe", type=int, default=None,
                   help="NFE budget; overrides --steps")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-tweedie", dest="tweedie", action="store_false")
    _add_output_flags(p)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("demo-stiff", help="stiff-scalar comparison table")
    p.add_argument("--lam", type=float, default=-20.0)
    p.add_argument("--steps", type=int, default=10)
    _add_output_flags(p)
    p.set_defaults(func=_cmd_demo_stiff)

    p = sub.add_parser("stability", help="stability-region scan")
    p.add_argument("--method", default="stork2")
    p.add_argument("--substeps", type=int, default=9)
    p.add_argument("--bounds", default="-80,5,-20,20")
    p.add_argument("--resolution", default="200,200")
    _add_output_flags(p)
    p.set_defaults(func=_cmd_stability)

    p = sub.add_parser("convergence", help="empirical order study")
    _add_problem_flags(p)
    _add_solver_flags(p, default_method="stork2")
    p.add_argument("--step-counts", dest="step_counts", default="10,20,40,80")
    p.add_argument("--t-lo", dest="t_lo", type=float, default=None)
    p.add_argument("--t-hi", dest="t_hi", type=float, default=None)
    _add_output_flags(p)
    p.set_defaults(func=_cmd_convergence)

    p = sub.add_parser("sweep", help="method x NFE-budget error grid")
    _add_problem_flags(p)
    _add_grid_flags(p)
    _add_solver_flags(p)
    p.add_argument("--methods", default="euler,stork2")
    p.add_argument("--nfe", dest="nfe_budgets", default="10,20,40")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--no-tweedie", dest="tweedie", action="store_false")
    p.add_argument("--workers", type=int, default=4)
    _add_output_flags(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("dump-coeffs", help="coefficient table for one method")
    p.add_argument("--method", default="stork2")
    p.add_argument("--substeps", type=int, default=4)
    p.add_argument("--strict-degree", dest="strict_degree", action="store_true")
    _add_output_flags(p)
    p.set_defaults(func=_cmd_dump_coeffs)

    return parser


def _apply_config_file(parser, argv):
    """Pre-scan for --config and fold the file's values in as defaults."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config is None:
        return parser.parse_args(argv)
    try:
        with open(known.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config file: {exc}") from None
    if not isinstance(loaded, dict):
        raise ConfigurationError("config file must hold a JSON object")
    for action in parser._subparsers._group_actions[0].choices.values():
        action.set_defaults(**loaded)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config_file(parser, list(sys.argv[1:] if argv is None else argv))
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: i/o failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
