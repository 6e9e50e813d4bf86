"""The solver engine.

Solvers walk a time grid from its largest time t_M down to its smallest t_0,
advancing one grid interval per super-step with x <- x - h * v.  The
stabilized methods (``stork2``, ``stork4``) run an s-stage recurrence per
super-step; in ``taylor`` sub-stage mode the internal stage values come from a
Taylor expansion of the field in time around the anchor (one real field
evaluation per super-step), seeded by a short start-up phase of Euler and
Adams-Bashforth steps; in ``exact`` mode every stage evaluates the field.

The flow solver is built on an incremental engine (:class:`FlowWalk`) that
exposes each pending field query explicitly, so external pipelines can drive
the exact same code path by supplying field values one at a time.

Stage updates are written in increment form (y0 plus coefficient-weighted
stage differences) so that a zero field reproduces the initial state bitwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np

from .coefficients import (
    Rkg2Coefficients,
    Rock4Coefficients,
    rkg2_coeffs,
    rock4_coeffs,
)
from .errors import ConfigurationError
from .fields import SemiLinearNoiseModel, VelocityField

Array = np.ndarray

STORK_METHODS = ("stork2", "stork4")
BASELINE_METHODS = ("euler", "heun", "rk4", "ab2")
NOISE_METHODS = ("stork4_noise",)
METHODS = BASELINE_METHODS + STORK_METHODS + NOISE_METHODS

#: relative tolerance for declaring a grid uniform
_UNIFORM_RTOL = 1e-12


# ---------------------------------------------------------------------------
# time grids


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing grid t_0 < t_1 < ... < t_M, walked downward.

    ``epsilon_floor`` records the terminal time bound used by noise-based
    solves (they stop at t_0 = epsilon_floor > 0 and finish by denoising).
    """

    points: Array
    schedule_kind: str = "uniform"
    shift: Optional[float] = None
    epsilon_floor: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        if pts.ndim != 1 or pts.size < 2:
            raise ConfigurationError("grid needs at least two time points")
        if not np.all(np.diff(pts) > 0.0):
            raise ConfigurationError("grid points must be strictly increasing")
        if self.epsilon_floor < 0.0:
            raise ConfigurationError("epsilon_floor must be nonnegative")
        if self.epsilon_floor > pts[0] + 1e-15:
            raise ConfigurationError(
                f"epsilon_floor {self.epsilon_floor} exceeds first grid point {pts[0]}"
            )

    @property
    def m(self) -> int:
        """Number of grid intervals (super-steps of a full solve)."""
        return self.points.size - 1

    @property
    def steps(self) -> Array:
        """Step sizes h_i = t_i - t_{i-1}, all positive."""
        return np.diff(self.points)

    @property
    def is_uniform(self) -> bool:
        h = self.steps
        return bool(np.all(np.abs(h - h[0]) <= _UNIFORM_RTOL * abs(h[0])))

    @classmethod
    def uniform(cls, t_lo: float, t_hi: float, m: int) -> "TimeGrid":
        """Uniform grid of m intervals on [t_lo, t_hi]."""
        if m < 1:
            raise ConfigurationError("need at least one interval")
        if not t_hi > t_lo:
            raise ConfigurationError("t_hi must exceed t_lo")
        return cls(
            points=np.linspace(t_lo, t_hi, m + 1),
            schedule_kind="uniform",
            epsilon_floor=max(t_lo, 0.0),
        )

    @classmethod
    def flow_shift(
        cls, t_lo: float, t_hi: float, m: int, shift: float = 3.0
    ) -> "TimeGrid":
        """Grid with fractions warped by u' = shift*u / (1 + (shift-1)*u)."""
        if m < 1:
            raise ConfigurationError("need at least one interval")
        if not t_hi > t_lo:
            raise ConfigurationError("t_hi must exceed t_lo")
        if shift <= 0.0:
            raise ConfigurationError("shift must be positive")
        u = np.linspace(0.0, 1.0, m + 1)
        warped = shift * u / (1.0 + (shift - 1.0) * u)
        return cls(
            points=t_lo + (t_hi - t_lo) * warped,
            schedule_kind="flow_shift",
            shift=shift,
            epsilon_floor=max(t_lo, 0.0),
        )


# ---------------------------------------------------------------------------
# solver configuration


@dataclass(frozen=True)
class SolverConfig:
    """Method selection plus the knobs of the stabilized solvers.

    ``taylor_order`` is the order n of the in-time Taylor expansion used for
    virtual stage evaluations (3 suits unconditional and noise-based use, 2
    guided flow use); ``substage_mode`` chooses between Taylor-approximated
    stages ("taylor") and one real field evaluation per stage ("exact");
    ``strict_degree`` forbids silent substitution of the nearest tabulated
    stage count for the fourth-order method.
    """

    method: str
    substeps: int = 9
    taylor_order: int = 3
    substage_mode: str = "taylor"
    strict_degree: bool = False

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )
        if self.taylor_order not in (2, 3):
            raise ConfigurationError("taylor_order must be 2 or 3")
        if self.substage_mode not in ("taylor", "exact"):
            raise ConfigurationError("substage_mode must be 'taylor' or 'exact'")
        if self.method in STORK_METHODS + NOISE_METHODS and self.substeps < 2:
            raise ConfigurationError("stabilized methods need substeps >= 2")


def _resolve_coeffs(config: SolverConfig):
    """Coefficient object for a stabilized method, honoring strict_degree."""
    if config.method == "stork2":
        return rkg2_coeffs(config.substeps)
    if config.method in ("stork4", "stork4_noise"):
        return rock4_coeffs(config.substeps, strict=config.strict_degree)
    return None


# ---------------------------------------------------------------------------
# finite-difference derivative machinery


def _fd_weights(times: Array, anchor_time: float, order: int) -> Array:
    """Weights w with sum_i w_i f(t_i) ~ f^(order)(anchor_time).

    Solves the Vandermonde moment system; exact for polynomials of degree
    below the number of points.
    """
    deltas = np.asarray(times, dtype=float) - anchor_time
    k = deltas.size
    if order >= k:
        raise ConfigurationError(f"{k} points cannot estimate derivative {order}")
    a = np.vander(deltas, k, increasing=True).T
    rhs = np.zeros(k)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(a, rhs)


def _check_distinct(times) -> None:
    ts = sorted(float(t) for t in times)
    if any(b - a == 0.0 for a, b in zip(ts, ts[1:])):
        raise ConfigurationError("stencil times must be distinct")


def fd_derivatives_3pt(evals, anchor_time: float):
    """First and second derivative estimates at anchor_time from three points.

    ``evals`` is a sequence of three (time, value) pairs; spacing may be
    nonuniform (general divided-difference weights).
    """
    if len(evals) != 3:
        raise ConfigurationError("fd_derivatives_3pt needs exactly three pairs")
    times = [t for t, _ in evals]
    _check_distinct(times)
    values = [np.asarray(v) for _, v in evals]
    w1 = _fd_weights(times, anchor_time, 1)
    w2 = _fd_weights(times, anchor_time, 2)
    d1 = sum(w * v for w, v in zip(w1, values))
    d2 = sum(w * v for w, v in zip(w2, values))
    return d1, d2


def fd_derivatives_4pt_uniform(evals, h: float):
    """First through third derivatives at the first of four uniform points.

    Uses the closed-form forward stencils (-11, 18, -9, 2)/(6h),
    (2, -5, 4, -1)/h^2 and (-1, 3, -3, 1)/h^3; non-uniform spacing errors.
    """
    if len(evals) != 4:
        raise ConfigurationError("fd_derivatives_4pt_uniform needs four pairs")
    times = np.array([t for t, _ in evals], dtype=float)
    _check_distinct(times)
    gaps = np.diff(times)
    if h == 0.0 or np.any(np.abs(gaps - h) > 1e-9 * abs(h)):
        raise ConfigurationError("fd_derivatives_4pt_uniform requires uniform spacing")
    f0, f1, f2, f3 = (np.asarray(v) for _, v in evals)
    d1 = (-11.0 * f0 + 18.0 * f1 - 9.0 * f2 + 2.0 * f3) / (6.0 * h)
    d2 = (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) / (h * h)
    d3 = (-f0 + 3.0 * f1 - 3.0 * f2 + f3) / (h * h * h)
    return d1, d2, d3


def fd_derivatives_4pt(evals, anchor_time: float):
    """General four-point (d1, d2, d3) at anchor_time, nonuniform allowed."""
    if len(evals) != 4:
        raise ConfigurationError("fd_derivatives_4pt needs exactly four pairs")
    times = [t for t, _ in evals]
    _check_distinct(times)
    values = [np.asarray(v) for _, v in evals]
    out = []
    for order in (1, 2, 3):
        w = _fd_weights(times, anchor_time, order)
        out.append(sum(wi * v for wi, v in zip(w, values)))
    return tuple(out)


@dataclass(frozen=True)
class DerivativeCache:
    """Field value and time-derivative estimates anchored at (Y_0, t_0).

    ``evals`` holds the (time, value) pairs the stencils consumed, newest
    (smallest-time) first; ``d3`` is present only for third-order caches.
    """

    anchor_time: float
    anchor_value: Array
    d1: Array
    d2: Array
    d3: Optional[Array] = None
    evals: tuple = dataclass_field(default=())

    @property
    def order(self) -> int:
        return 2 if self.d3 is None else 3


def build_derivative_cache(evals, order: int) -> DerivativeCache:
    """Assemble a cache from the (order + 1) most recent real evaluations.

    The walk runs downward in time, so the most recent evaluation has the
    smallest time and becomes the anchor; the remaining points lie forward of
    it (one-sided stencils).
    """
    if order not in (2, 3):
        raise ConfigurationError("taylor order must be 2 or 3")
    needed = order + 1
    if len(evals) < needed:
        raise ConfigurationError(
            f"order {order} cache needs {needed} evaluations, got {len(evals)}"
        )
    recent = sorted(evals, key=lambda pair: pair[0])[:needed]
    anchor_time, anchor_value = recent[0]
    if order == 2:
        d1, d2 = fd_derivatives_3pt(recent, anchor_time)
        d3 = None
    else:
        d1, d2, d3 = fd_derivatives_4pt(recent, anchor_time)
    return DerivativeCache(
        anchor_time=anchor_time,
        anchor_value=np.asarray(anchor_value),
        d1=d1,
        d2=d2,
        d3=d3,
        evals=tuple(recent),
    )


def taylor_eval(cache: DerivativeCache, order: int, dt: float) -> Array:
    """Taylor-expanded field value at anchor_time + dt."""
    if order not in (2, 3):
        raise ConfigurationError("taylor order must be 2 or 3")
    if order == 3 and cache.d3 is None:
        raise ConfigurationError("order-3 evaluation requested on an order-2 cache")
    out = cache.anchor_value + dt * cache.d1 + (0.5 * dt * dt) * cache.d2
    if order == 3:
        out = out + (dt * dt * dt / 6.0) * cache.d3
    return out


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-super-step health data."""

    grid_index: int
    max_stage_magnitude: float


@dataclass(frozen=True)
class SolveReport:
    """Result of a full solve.

    ``trajectory[i]`` is the state at grid point t_i (index 0 is the terminal
    time); ``nfe`` counts real field evaluations only — Taylor-expanded stage
    values are free.  ``substeps_used`` records the stage count actually run,
    which can differ from the requested one when the nearest tabulated degree
    was substituted.
    """

    trajectory: Array
    nfe: int
    per_step: tuple
    final_state: Array
    method: str
    substeps_used: Optional[int] = None


# ---------------------------------------------------------------------------
# start-up phase


def startup_flow(x_init: Array, grid: TimeGrid, field, taylor_order: int):
    """Run the start-up phase with direct field evaluation.

    Returns (state at t_{M-n}, primed DerivativeCache, nfe_used).  The
    sequence is a half-step Euler, a half-step two-step correction to t_{M-1},
    and one (order 2) or two (order 3) nonuniform Adams-Bashforth steps.
    """
    evaluator = field.eval if hasattr(field, "eval") else field
    gen = _startup_gen(np.asarray(x_init), grid, taylor_order)
    query = next(gen)
    nfe = 0
    while True:
        nfe += 1
        try:
            query = gen.send(evaluator(*query))
        except StopIteration as stop:
            state, evals, _states = stop.value
            break
    cache = build_derivative_cache(evals, taylor_order)
    return state, cache, nfe


def _startup_gen(x_init: Array, grid: TimeGrid, order: int):
    """Start-up phase as a query generator.

    Yields (state, time) queries and receives field values; returns
    (reached state, list of (time, value) pairs, list of grid-point states
    for t_{M-1} .. t_{M-order}).
    """
    pts = grid.points
    m = grid.m
    if m < order + 1:
        raise ConfigurationError(
            f"grid with {m} intervals is too short for taylor_order {order}"
        )
    t_m = pts[m]
    h_m = pts[m] - pts[m - 1]
    x = x_init

    v0 = yield (x, t_m)
    x_half = x - 0.5 * h_m * v0
    v1 = yield (x_half, t_m - 0.5 * h_m)
    x1 = x_half - 0.75 * h_m * v1 + 0.25 * h_m * v0

    v2 = yield (x1, pts[m - 1])
    h1 = pts[m - 1] - pts[m - 2]
    r1 = h1 * h1 / (2.0 * h_m)
    x2 = x1 - (r1 + h1) * v2 + r1 * v0

    evals = [(t_m, v0), (t_m - 0.5 * h_m, v1), (pts[m - 1], v2)]
    states = [x1, x2]
    if order == 2:
        return x2, evals, states

    v3 = yield (x2, pts[m - 2])
    h2 = pts[m - 2] - pts[m - 3]
    r2 = h2 * h2 / (2.0 * h1)
    x3 = x2 - (r2 + h2) * v3 + r2 * v2
    evals.append((pts[m - 2], v3))
    states.append(x3)
    return x3, evals, states


# ---------------------------------------------------------------------------
# super-steps


def _stork2_stage_times(coeffs: Rkg2Coefficients, t0: float, h: float) -> Array:
    return t0 - h * coeffs.c


def _stork2_taylor_core(y0, t0, h, coeffs: Rkg2Coefficients, cache, order):
    """One second-order super-step with Taylor-expanded stage values."""
    s = coeffs.substeps
    v_anchor = cache.anchor_value
    y_pp = y0
    y_p = y0 - (h * coeffs.mu_tilde[1]) * v_anchor
    max_mag = max(_mag(y_pp), _mag(y_p))
    for j in range(2, s + 1):
        dt = -h * coeffs.c[j - 1]
        v_star = taylor_eval(cache, order, dt)
        y = (
            y0
            + coeffs.mu[j] * (y_p - y0)
            + coeffs.nu[j] * (y_pp - y0)
            - (coeffs.mu_tilde[j] * h) * v_star
            - (coeffs.gamma_tilde[j] * h) * v_anchor
        )
        y_pp, y_p = y_p, y
        max_mag = max(max_mag, _mag(y))
    return y_p, max_mag


def _stork2_exact_gen(y0, t0, h, coeffs: Rkg2Coefficients):
    """One second-order super-step evaluating the field at every stage."""
    s = coeffs.substeps
    times = _stork2_stage_times(coeffs, t0, h)
    v_anchor = yield (y0, t0)
    y_pp = y0
    y_p = y0 - (h * coeffs.mu_tilde[1]) * v_anchor
    max_mag = max(_mag(y_pp), _mag(y_p))
    for j in range(2, s + 1):
        v_star = yield (y_p, times[j - 1])
        y = (
            y0
            + coeffs.mu[j] * (y_p - y0)
            + coeffs.nu[j] * (y_pp - y0)
            - (coeffs.mu_tilde[j] * h) * v_star
            - (coeffs.gamma_tilde[j] * h) * v_anchor
        )
        y_pp, y_p = y_p, y
        max_mag = max(max_mag, _mag(y))
    return y_p, max_mag


def _stork4_taylor_core(y0, t0, h, coeffs: Rock4Coefficients, cache, order):
    """One fourth-order super-step with Taylor-expanded stage values."""
    s = coeffs.substeps
    v_anchor = cache.anchor_value
    y_pp = y0
    y_p = y0 - (h * coeffs.mu[1]) * v_anchor
    max_mag = max(_mag(y_pp), _mag(y_p))
    base = y_p if s - 4 == 1 else None
    for j in range(2, s + 1):
        dt = -h * coeffs.c[j - 1]
        v_star = taylor_eval(cache, order, dt)
        if j <= s - 4:
            y = (
                y0
                - coeffs.nu[j] * (y_p - y0)
                - coeffs.kappa[j] * (y_pp - y0)
                - (h * coeffs.mu[j]) * v_star
            )
            if j == s - 4:
                base = y
        else:
            y = base - (h * coeffs.mu[j]) * v_star
        y_pp, y_p = y_p, y
        max_mag = max(max_mag, _mag(y))
    return y_p, max_mag


def _stork4_exact_gen(y0, t0, h, coeffs: Rock4Coefficients):
    """One fourth-order super-step evaluating the field at every stage."""
    s = coeffs.substeps
    times = t0 - h * coeffs.c
    v_anchor = yield (y0, t0)
    y_pp = y0
    y_p = y0 - (h * coeffs.mu[1]) * v_anchor
    max_mag = max(_mag(y_pp), _mag(y_p))
    base = y_p if s - 4 == 1 else None
    for j in range(2, s + 1):
        v_star = yield (y_p, times[j - 1])
        if j <= s - 4:
            y = (
                y0
                - coeffs.nu[j] * (y_p - y0)
                - coeffs.kappa[j] * (y_pp - y0)
                - (h * coeffs.mu[j]) * v_star
            )
            if j == s - 4:
                base = y
        else:
            y = base - (h * coeffs.mu[j]) * v_star
        y_pp, y_p = y_p, y
        max_mag = max(max_mag, _mag(y))
    return y_p, max_mag


def _mag(state) -> float:
    return float(np.max(np.abs(state)))


def _drive(gen, evaluator):
    """Run a query generator against a field callable; return its result."""
    try:
        query = next(gen)
        while True:
            query = gen.send(evaluator(*query))
    except StopIteration as stop:
        return stop.value


def stork2_superstep(y0, t0, h, coeffs, cache=None, field=None, mode="taylor",
                     taylor_order=None):
    """One second-order super-step from (y0, t0) to t0 - h.

    In taylor mode the single real field value is the cache's anchor value (no
    field call is made here); in exact mode every stage calls ``field``.
    """
    if mode == "taylor":
        if cache is None:
            raise ConfigurationError("taylor mode requires a primed cache")
        order = taylor_order if taylor_order is not None else cache.order
        state, _ = _stork2_taylor_core(np.asarray(y0), t0, h, coeffs, cache, order)
        return state
    if mode == "exact":
        if field is None:
            raise ConfigurationError("exact mode requires a field")
        evaluator = field.eval if hasattr(field, "eval") else field
        state, _ = _drive(_stork2_exact_gen(np.asarray(y0), t0, h, coeffs), evaluator)
        return state
    raise ConfigurationError(f"unknown sub-stage mode {mode!r}")


def stork4_superstep(y0, t0, h, coeffs, cache=None, field=None, mode="taylor",
                     taylor_order=None):
    """One fourth-order super-step from (y0, t0) to t0 - h."""
    if mode == "taylor":
        if cache is None:
            raise ConfigurationError("taylor mode requires a primed cache")
        order = taylor_order if taylor_order is not None else cache.order
        state, _ = _stork4_taylor_core(np.asarray(y0), t0, h, coeffs, cache, order)
        return state
    if mode == "exact":
        if field is None:
            raise ConfigurationError("exact mode requires a field")
        evaluator = field.eval if hasattr(field, "eval") else field
        state, _ = _drive(_stork4_exact_gen(np.asarray(y0), t0, h, coeffs), evaluator)
        return state
    raise ConfigurationError(f"unknown sub-stage mode {mode!r}")


# ---------------------------------------------------------------------------
# baselines


def baseline_step(method: str, state, t: float, h: float, field, prev=None):
    """One classical comparison step from (state, t) to t - h.

    ``prev`` supplies the (time, field value) pair of the previous anchor for
    the two-step Adams-Bashforth method.
    """
    evaluator = field.eval if hasattr(field, "eval") else field
    gen = _baseline_gen(method, np.asarray(state), t, h, prev)
    next_state, _ = _drive(gen, evaluator)
    return next_state


def _baseline_gen(method: str, x, t, h, prev=None):
    """Query-generator form of one baseline step."""
    if method == "euler":
        v = yield (x, t)
        return x - h * v, (t, v)
    if method == "heun":
        k1 = yield (x, t)
        k2 = yield (x - h * k1, t - h)
        return x - (0.5 * h) * (k1 + k2), (t, k1)
    if method == "rk4":
        k1 = yield (x, t)
        k2 = yield (x - (0.5 * h) * k1, t - 0.5 * h)
        k3 = yield (x - (0.5 * h) * k2, t - 0.5 * h)
        k4 = yield (x - h * k3, t - h)
        return x - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), (t, k1)
    if method == "ab2":
        if prev is None:
            raise ConfigurationError("ab2 requires the previous (time, value) pair")
        t_prev, v_prev = prev
        h_prev = t_prev - t
        if h_prev <= 0.0:
            raise ConfigurationError("ab2 previous time must exceed the current one")
        v = yield (x, t)
        r = h * h / (2.0 * h_prev)
        return x - (r + h) * v + r * v_prev, (t, v)
    raise ConfigurationError(f"unknown baseline method {method!r}")


# ---------------------------------------------------------------------------
# full flow solve


def _flow_walk_gen(x_init: Array, grid: TimeGrid, config: SolverConfig, coeffs):
    """Full flow solve as one query generator.

    Yields (state, time) queries; returns (trajectory list indexed by grid
    point, per-step diagnostics tuple).
    """
    pts = grid.points
    m = grid.m
    x = np.asarray(x_init)
    traj = [None] * (m + 1)
    traj[m] = x
    per_step = []

    if config.method in BASELINE_METHODS:
        prev = None
        for i in range(m, 0, -1):
            h = pts[i] - pts[i - 1]
            if config.method == "ab2" and prev is None:
                # seed with the start-up pattern: half-step Euler plus a
                # two-step correction, so the first interval is second order
                v0 = yield (x, pts[i])
                x_half = x - 0.5 * h * v0
                v1 = yield (x_half, pts[i] - 0.5 * h)
                x = x_half - 0.75 * h * v1 + 0.25 * h * v0
                prev = (pts[i], v0)
            else:
                x, prev = yield from _baseline_gen(config.method, x, pts[i], h, prev)
            traj[i - 1] = x
            per_step.append(StepDiagnostics(i, _mag(x)))
        return traj, tuple(per_step)

    if config.substage_mode == "exact":
        gen_fn = _stork2_exact_gen if config.method == "stork2" else _stork4_exact_gen
        for i in range(m, 0, -1):
            h = pts[i] - pts[i - 1]
            x, max_mag = yield from gen_fn(x, pts[i], h, coeffs)
            traj[i - 1] = x
            per_step.append(StepDiagnostics(i, max_mag))
        return traj, tuple(per_step)

    order = config.taylor_order
    x, evals, startup_states = yield from _startup_gen(x, grid, order)
    for k, state in enumerate(startup_states):
        traj[m - 1 - k] = state
        per_step.append(StepDiagnostics(m - k, _mag(state)))
    core = _stork2_taylor_core if config.method == "stork2" else _stork4_taylor_core
    for i in range(m - order, 0, -1):
        t0 = pts[i]
        h = pts[i] - pts[i - 1]
        v_anchor = yield (x, t0)
        evals.append((t0, v_anchor))
        cache = build_derivative_cache(evals[-(order + 1):], order)
        x, max_mag = core(x, t0, h, coeffs, cache, order)
        traj[i - 1] = x
        per_step.append(StepDiagnostics(i, max_mag))
    return traj, tuple(per_step)


class FlowWalk:
    """Incremental flow solve: the host supplies every real field value.

    After construction, :attr:`pending_query` holds the (state, time) pair at
    which the field must be evaluated next; feed the result to
    :meth:`advance`.  When :attr:`finished` turns true, :meth:`report` returns
    the completed :class:`SolveReport`.  Exactly the same code path as
    :func:`solve_flow`, so driving the walk with a field reproduces a direct
    solve bitwise.
    """

    def __init__(self, x_init, grid: TimeGrid, config: SolverConfig):
        if config.method in NOISE_METHODS:
            raise ConfigurationError("noise-based methods use solve_noise")
        if config.method in STORK_METHODS and config.substage_mode == "taylor":
            if grid.m < config.taylor_order + 1:
                raise ConfigurationError(
                    f"grid with {grid.m} intervals is too short for "
                    f"taylor_order {config.taylor_order}"
                )
        self.grid = grid
        self.config = config
        self._coeffs = _resolve_coeffs(config)
        self._x_init = np.asarray(x_init)
        self._gen = _flow_walk_gen(self._x_init, grid, config, self._coeffs)
        self._nfe = 0
        self._result = None
        self._pending = None
        self._step()

    def _step(self, value=None):
        try:
            if value is None:
                self._pending = next(self._gen)
            else:
                self._pending = self._gen.send(value)
        except StopIteration as stop:
            self._pending = None
            self._result = stop.value

    @property
    def pending_query(self):
        """Next (state, time) the host must evaluate, or None when done."""
        return self._pending

    @property
    def finished(self) -> bool:
        return self._result is not None

    @property
    def nfe(self) -> int:
        return self._nfe

    def advance(self, field_value) -> None:
        """Consume the field value for the current pending query."""
        if self._pending is None:
            raise ConfigurationError("walk already finished; no query pending")
        expected = np.asarray(self._pending[0])
        value = np.asarray(field_value)
        if value.shape != expected.shape:
            raise ConfigurationError(
                f"field value shape {value.shape} does not match state shape "
                f"{expected.shape}"
            )
        self._nfe += 1
        self._step(value)

    def report(self) -> SolveReport:
        """The finished solve; raises if queries are still pending."""
        if self._result is None:
            raise ConfigurationError("walk not finished; a query is pending")
        traj, per_step = self._result
        trajectory = np.stack(traj)
        substeps_used = self._coeffs.substeps if self._coeffs is not None else None
        return SolveReport(
            trajectory=trajectory,
            nfe=self._nfe,
            per_step=per_step,
            final_state=traj[0],
            method=self.config.method,
            substeps_used=substeps_used,
        )


def solve_flow(x_init, grid: TimeGrid, field, config: SolverConfig) -> SolveReport:
    """Solve dx/dt = v(x, t) from (x_init, t_M) down to t_0.

    In taylor sub-stage mode the count of real field evaluations is
    M + 1 regardless of taylor order; exact mode evaluates once per stage.
    """
    evaluator = field.eval if hasattr(field, "eval") else field
    walk = FlowWalk(x_init, grid, config)
    while not walk.finished:
        state, t = walk.pending_query
        walk.advance(evaluator(state, t))
    return walk.report()


# ---------------------------------------------------------------------------
# noise-based solve


def tweedie_finish(x_at_floor, t_floor: float, model: SemiLinearNoiseModel):
    """Denoise the state reached at the epsilon floor.

    Returns (x - sigma(t) * eps(x, t)) / alpha_bar(t); costs one real
    evaluation of the noise prediction.
    """
    ab = model.alpha_bar(t_floor)
    if ab == 0.0:
        raise ConfigurationError(f"alpha_bar({t_floor}) is zero")
    x = np.asarray(x_at_floor)
    return (x - model.sigma(t_floor) * model.eps(x, t_floor)) / ab


def _noise_superstep(y0, t0, h, coeffs, model, eps0, d1, d2, d3):
    """One fourth-order super-step on the semi-linear noise right-hand side.

    Stage right-hand sides combine the Taylor-expanded noise prediction with
    the linear drift evaluated at the current stage state.
    """
    s = coeffs.substeps
    f0 = model.rhs_from_eps(eps0, y0, t0)
    y_pp = y0
    y_p = y0 - (h * coeffs.mu[1]) * f0
    max_mag = max(_mag(y_pp), _mag(y_p))
    base = y_p if s - 4 == 1 else None
    for j in range(2, s + 1):
        dt = -h * coeffs.c[j - 1]
        t_stage = t0 + dt
        eps_star = eps0 + dt * d1 + (0.5 * dt * dt) * d2
        if d3 is not None:
            eps_star = eps_star + (dt * dt * dt / 6.0) * d3
        f_star = model.rhs_from_eps(eps_star, y_p, t_stage)
        if j <= s - 4:
            y = (
                y0
                - coeffs.nu[j] * (y_p - y0)
                - coeffs.kappa[j] * (y_pp - y0)
                - (h * coeffs.mu[j]) * f_star
            )
            if j == s - 4:
                base = y
        else:
            y = base - (h * coeffs.mu[j]) * f_star
        y_pp, y_p = y_p, y
        max_mag = max(max_mag, _mag(y))
    return y_p, max_mag


def solve_noise(
    x_init,
    grid: TimeGrid,
    model: SemiLinearNoiseModel,
    config: SolverConfig,
    tweedie: bool = True,
) -> SolveReport:
    """Solve the noise-prediction ODE from t_M down to the epsilon floor.

    Requires a uniform grid (the stencil ladder assumes one step size) with a
    strictly positive first point.  Uses M + 2 real evaluations (three for the
    first interval, one per remaining interval) plus one more when ``tweedie``
    finishing is on.
    """
    if config.method not in NOISE_METHODS:
        raise ConfigurationError(
            f"solve_noise supports methods {NOISE_METHODS}, got {config.method!r}"
        )
    if config.substage_mode != "taylor":
        raise ConfigurationError("the noise-based solver is taylor-mode only")
    if not grid.is_uniform:
        raise ConfigurationError("the noise-based solver requires a uniform grid")
    pts = grid.points
    m = grid.m
    t_floor = pts[0]
    if t_floor <= 0.0:
        raise ConfigurationError("noise-based solves need a positive epsilon floor")
    if model.sigma(t_floor) <= 0.0:
        raise ConfigurationError(f"sigma({t_floor}) must be positive")
    coeffs = rock4_coeffs(config.substeps, strict=config.strict_degree)
    h = pts[m] - pts[m - 1]

    x = np.asarray(x_init)
    traj = [None] * (m + 1)
    traj[m] = x
    per_step = []
    eps_at = {}  # grid index -> noise prediction at the corrected state
    nfe = 0

    # first interval: half-step Euler plus a corrected step seed the stencils
    eps_m = model.eps(x, pts[m])
    nfe += 1
    f_m = model.rhs_from_eps(eps_m, x, pts[m])
    x_half = x - 0.5 * h * f_m
    t_half = pts[m] - 0.5 * h
    eps_half = model.eps(x_half, t_half)
    nfe += 1
    f_half = model.rhs_from_eps(eps_half, x_half, t_half)
    x_prov = x_half - 0.75 * h * f_half + 0.25 * h * f_m
    eps_prov = model.eps(x_prov, pts[m - 1])
    nfe += 1
    d1 = (3.0 * eps_m - 4.0 * eps_half + eps_prov) / h
    d2 = (eps_m - 2.0 * eps_half + eps_prov) / (0.25 * h * h)
    x, max_mag = _noise_superstep(x, pts[m], h, coeffs, model, eps_m, d1, d2, None)
    traj[m - 1] = x
    per_step.append(StepDiagnostics(m, max_mag))
    eps_at[m] = eps_m

    for i in range(m - 1, 0, -1):
        t_i = pts[i]
        eps_i = model.eps(x, t_i)
        nfe += 1
        eps_at[i] = eps_i
        if i == m - 1:
            dt = 0.5 * h
            e1, e2 = eps_half, eps_m
            d1 = (-3.0 * eps_i + 4.0 * e1 - e2) / (2.0 * dt)
            d2 = (eps_i - 2.0 * e1 + e2) / (dt * dt)
            d3 = None
        elif i == m - 2:
            dt = h
            e1, e2 = eps_at[i + 1], eps_at[i + 2]
            d1 = (-3.0 * eps_i + 4.0 * e1 - e2) / (2.0 * dt)
            d2 = (eps_i - 2.0 * e1 + e2) / (dt * dt)
            d3 = None
        else:
            e1, e2, e3 = eps_at[i + 1], eps_at[i + 2], eps_at[i + 3]
            d1 = (-11.0 * eps_i + 18.0 * e1 - 9.0 * e2 + 2.0 * e3) / (6.0 * h)
            d2 = (2.0 * eps_i - 5.0 * e1 + 4.0 * e2 - e3) / (h * h)
            d3 = (-eps_i + 3.0 * e1 - 3.0 * e2 + e3) / (h * h * h)
        x, max_mag = _noise_superstep(x, t_i, h, coeffs, model, eps_i, d1, d2, d3)
        traj[i - 1] = x
        per_step.append(StepDiagnostics(i, max_mag))

    final = traj[0]
    if tweedie:
        final = tweedie_finish(traj[0], t_floor, model)
        nfe += 1
    return SolveReport(
        trajectory=np.stack(traj),
        nfe=nfe,
        per_step=tuple(per_step),
        final_state=final,
        method=config.method,
        substeps_used=coeffs.substeps,
    )
