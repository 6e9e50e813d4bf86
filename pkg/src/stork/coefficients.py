"""Recurrence coefficients for the stabilized solvers.

Two coefficient families are provided:

* second-order Runge-Kutta-Gegenbauer (RKG2) coefficients, generated from
  exact rational formulas, with the stability polynomial available in closed
  form through the Gegenbauer three-term recurrence;
* fourth-order orthogonal Runge-Kutta-Chebyshev (ROCK4-style) coefficients,
  shipped as a precomputed, checksummed table and validated behaviorally at
  load time (fourth-order Taylor consistency plus a stability scan).

Indexing convention: coefficient arrays are full length ``substeps + 1`` and
indexed by the stage number ``j`` they belong to; entries below the first
defined index are NaN.
"""

from __future__ import annotations

import hashlib
import importlib.resources
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError

EXP_SERIES = (1.0, 1.0, 0.5, 1.0 / 6.0, 1.0 / 24.0)

RKG2_CONSISTENCY_TOL = 1e-7
ROCK4_CONSISTENCY_TOL = 1e-6
STABILITY_SLACK = 1e-8

_TABLE_RESOURCE = "rock4_tables.npz"


def gegenbauer_c32(degree: int, x):
    """Gegenbauer polynomial C_degree^(3/2)(x) via the three-term recurrence.

    C_0 = 1, C_1 = 3x, C_j = [2x(j + 1/2) C_{j-1} - (j + 1) C_{j-2}] / j.
    Accepts real or complex scalars and numpy arrays.
    """
    if degree < 0:
        raise ConfigurationError("degree must be nonnegative")
    c_prev = 1.0 + 0 * x
    if degree == 0:
        return c_prev
    c_cur = 3 * x
    for j in range(2, degree + 1):
        c_prev, c_cur = c_cur, (2 * x * (j + 0.5) * c_cur - (j + 1) * c_prev) / j
    return c_cur


@dataclass(frozen=True)
class Rkg2Coefficients:
    """RKG2 recurrence parameters for a given sub-step count."""

    substeps: int
    w1: float
    a: np.ndarray          # a[0..s]
    b: np.ndarray          # b[0..s]
    mu: np.ndarray         # mu[2..s]
    mu_tilde: np.ndarray   # mu_tilde[1..s]
    nu: np.ndarray         # nu[2..s]
    gamma_tilde: np.ndarray  # gamma_tilde[2..s]
    c: np.ndarray          # stage abscissae c[0..s]

    @property
    def stability_extent(self) -> float:
        """Real-axis stability extent 2/w1 = (s+4)(s-1)/3."""
        return 2.0 / self.w1


@dataclass(frozen=True)
class Rock4Coefficients:
    """Fourth-order stabilized recurrence parameters for one degree.

    ``mu[1..s]`` drives every stage; ``nu[2..s-4]`` and ``kappa[2..s-4]``
    complete the three-term recurrence part; the last four entries of ``mu``
    form the finishing block that applies the quartic composition factor.
    """

    substeps: int
    mu: np.ndarray        # mu[1..s]
    nu: np.ndarray        # nu[2..s-4]
    kappa: np.ndarray     # kappa[2..s-4]
    stability_extent: float
    c: np.ndarray         # stage abscissae c[0..s]

    @property
    def finishing(self) -> np.ndarray:
        """Coefficients of the four finishing stages (mu[s-3..s])."""
        return self.mu[self.substeps - 3:]


def rkg2_coeffs(substeps: int) -> Rkg2Coefficients:
    """Generate RKG2 coefficients for ``substeps`` >= 2.

    All values are evaluated as exact rationals before conversion to float.
    The printed b_j formula vanishes at j = 1 and is undefined at j = 0, so
    the low indices use the standard stabilized-RK convention b_0 = b_1 = b_2
    (with a_0 = 1 - b_0, a_1 = 1 - 3 b_1 and first-stage coefficient
    mu_tilde_1 = 3 w1 b_1), which makes every stage amplification equal
    a_j + b_j C_j^(3/2)(1 + w1 z).
    """
    s = int(substeps)
    if s < 2:
        raise ConfigurationError("RKG2 needs at least 2 sub-steps")

    w1 = Fraction(6, (s + 4) * (s - 1))

    def b_formula(j: int) -> Fraction:
        return Fraction(4 * (j - 1) * (j + 4), 3 * j * (j + 1) * (j + 2) * (j + 3))

    b = [Fraction(0)] * (s + 1)
    for j in range(2, s + 1):
        b[j] = b_formula(j)
    b[0] = b[1] = b[2]
    a = [Fraction(0)] * (s + 1)
    for j in range(2, s + 1):
        a[j] = 1 - Fraction((j + 1) * (j + 2), 2) * b[j]
    a[0] = 1 - b[0]
    a[1] = 1 - 3 * b[1]

    mu = [Fraction(0)] * (s + 1)
    mu_tilde = [Fraction(0)] * (s + 1)
    nu = [Fraction(0)] * (s + 1)
    gamma_tilde = [Fraction(0)] * (s + 1)
    mu_tilde[1] = 3 * w1 * b[1]
    for j in range(2, s + 1):
        mu[j] = Fraction(2 * j + 1, j) * b[j] / b[j - 1]
        mu_tilde[j] = mu[j] * w1
        nu[j] = -Fraction(j + 1, j) * b[j] / b[j - 2]
        gamma_tilde[j] = -mu_tilde[j] * a[j - 1]

    nan_below = lambda arr, lo: np.array(
        [np.nan] * lo + [float(v) for v in arr[lo:]]
    )
    coeffs = Rkg2Coefficients(
        substeps=s,
        w1=float(w1),
        a=np.array([float(v) for v in a]),
        b=np.array([float(v) for v in b]),
        mu=nan_below(mu, 2),
        mu_tilde=nan_below(mu_tilde, 1),
        nu=nan_below(nu, 2),
        gamma_tilde=nan_below(gamma_tilde, 2),
        c=np.zeros(s + 1),
    )
    object.__setattr__(coeffs, "c", stage_abscissae(coeffs))
    return coeffs


def rkg2_stability_poly(coeffs: Rkg2Coefficients, z):
    """Closed-form amplification a_s + b_s C_s^(3/2)(1 + w1 z)."""
    s = coeffs.substeps
    return coeffs.a[s] + coeffs.b[s] * gegenbauer_c32(s, 1.0 + coeffs.w1 * z)


def rkg2_amplification(coeffs: Rkg2Coefficients, z):
    """Scalar amplification of one RKG2 super-step, via the stage recurrence.

    ``z`` is the stability argument (minus step size times eigenvalue in the
    decreasing-time walk); accepts complex values.
    """
    s = coeffs.substeps
    y_pp = 1.0
    y_p = 1.0 + coeffs.mu_tilde[1] * z
    if s == 1:
        return y_p
    for j in range(2, s + 1):
        y = (
            coeffs.mu[j] * y_p
            + coeffs.nu[j] * y_pp
            + (1.0 - coeffs.mu[j] - coeffs.nu[j])
            + coeffs.mu_tilde[j] * z * y_p
            + coeffs.gamma_tilde[j] * z
        )
        y_pp, y_p = y_p, y
    return y_p


def rock4_amplification(coeffs: Rock4Coefficients, z):
    """Scalar amplification of one fourth-order super-step."""
    s = coeffs.substeps
    y_pp = 1.0
    y_p = 1.0 + coeffs.mu[1] * z
    for j in range(2, s - 3):
        y = coeffs.mu[j] * z * y_p - coeffs.nu[j] * y_p - coeffs.kappa[j] * y_pp
        y_pp, y_p = y_p, y
    base = y_p  # amplification of Y_{s-4}
    for j in range(s - 3, s + 1):
        y_p = base + coeffs.mu[j] * z * y_p
    return y_p


def stage_abscissae(coeffs) -> np.ndarray:
    """Stage abscissae from a run of the recurrence on dx/dt = 1.

    With h = 1 and x = 0 the stage states equal minus the elapsed fraction of
    the step, so c_j = -Y_j; consistency forces c_0 = 0 and c_s = 1.
    """
    s = coeffs.substeps
    c = np.zeros(s + 1)
    if isinstance(coeffs, Rkg2Coefficients):
        y_pp, y_p = 0.0, -coeffs.mu_tilde[1]
        c[1] = -y_p
        for j in range(2, s + 1):
            y = (
                coeffs.mu[j] * y_p
                + coeffs.nu[j] * y_pp
                - coeffs.mu_tilde[j]
                - coeffs.gamma_tilde[j]
            )
            c[j] = -y
            y_pp, y_p = y_p, y
    elif isinstance(coeffs, Rock4Coefficients):
        y_pp, y_p = 0.0, -coeffs.mu[1]
        c[1] = -y_p
        for j in range(2, s - 3):
            y = -coeffs.mu[j] - coeffs.nu[j] * y_p - coeffs.kappa[j] * y_pp
            c[j] = -y
            y_pp, y_p = y_p, y
        base = y_p  # Y_{s-4}; the four finishing stages all branch from it
        for j in range(s - 3, s + 1):
            y_p = base - coeffs.mu[j]
            c[j] = -y_p
    else:
        raise ConfigurationError(f"unsupported coefficient type {type(coeffs)!r}")
    return c


@dataclass(frozen=True)
class ConsistencyReport:
    """Deviations of the amplification's Taylor coefficients from exp."""

    method: str
    substeps: int
    coefficients: np.ndarray   # estimated Taylor coefficients at z = 0
    targets: np.ndarray
    deviations: np.ndarray
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.all(self.deviations < self.tolerance))


def _fd_taylor_coefficients(ampl, order: int, radius: float = 0.05) -> np.ndarray:
    """Taylor coefficients of an analytic scalar map at 0.

    Uses the Cauchy-integral trapezoid rule on a small circle of radius
    ``radius`` (roots-of-unity sampling): c_k = mean(R(r w^j) w^{-jk}) / r^k.
    For a polynomial amplification this is accurate to roundoff divided by
    r^k, far below the consistency tolerances, and needs no step tuning.
    """
    n = 128
    angles = 2.0 * np.pi * np.arange(n) / n
    nodes = radius * np.exp(1j * angles)
    values = np.array([ampl(z) for z in nodes])
    coeffs = np.fft.fft(values) / n
    out = (coeffs[: order + 1] / radius ** np.arange(order + 1)).real
    return np.asarray(out)


def validate_consistency(coeffs) -> ConsistencyReport:
    """Check the amplification's Taylor expansion at 0 against the exp series.

    RKG2 is checked to second order with tolerance 1e-7; the fourth-order
    coefficients are checked through z^4/24 with tolerance 1e-6.  Deviations
    are reported, never raised.
    """
    if isinstance(coeffs, Rkg2Coefficients):
        method, order, tol = "rkg2", 2, RKG2_CONSISTENCY_TOL
        ampl = lambda z: rkg2_amplification(coeffs, z)
    else:
        method, order, tol = "rock4", 4, ROCK4_CONSISTENCY_TOL
        ampl = lambda z: rock4_amplification(coeffs, z)
    est = _fd_taylor_coefficients(ampl, order)
    targets = np.array(EXP_SERIES[: order + 1])
    return ConsistencyReport(
        method=method,
        substeps=coeffs.substeps,
        coefficients=est,
        targets=targets,
        deviations=np.abs(est - targets),
        tolerance=tol,
    )


# ---------------------------------------------------------------------------
# fourth-order coefficient table


def _table_bytes() -> bytes:
    resource = importlib.resources.files("stork").joinpath("data", _TABLE_RESOURCE)
    return resource.read_bytes()


@lru_cache(maxsize=1)
def table_checksum() -> str:
    """SHA-256 of the embedded fourth-order coefficient table."""
    return hashlib.sha256(_table_bytes()).hexdigest()


@lru_cache(maxsize=1)
def _load_table() -> dict:
    import io

    with np.load(io.BytesIO(_table_bytes())) as data:
        return {key: np.array(value) for key, value in data.items()}


def supported_rock4_degrees() -> np.ndarray:
    """Sorted array of tabulated fourth-order degrees."""
    return np.sort(_load_table()["degrees"].astype(int))


@lru_cache(maxsize=None)
def rock4_coeffs(substeps: int, strict: bool = False) -> Rock4Coefficients:
    """Load (and validate) the fourth-order coefficients for one degree.

    Unsupported degrees round up to the nearest tabulated one unless
    ``strict``; the substitution is visible through ``.substeps``.  Every
    entry is validated on first load: Taylor coefficients at 0 must match the
    exp series through fourth order, and |R| must stay within 1 + 1e-8 on the
    advertised stability interval.
    """
    degrees = supported_rock4_degrees()
    s = int(substeps)
    if s not in degrees:
        larger = degrees[degrees >= s]
        nearest = int(larger[0]) if larger.size else int(degrees[-1])
        if strict:
            lower = degrees[degrees <= s]
            hint = [int(lower[-1])] if lower.size else []
            hint.append(nearest)
            raise ConfigurationError(
                f"degree {s} not tabulated; nearest supported: {sorted(set(hint))}"
            )
        s = nearest
    table = _load_table()
    mu = np.concatenate([[np.nan], table[f"s{s}_mu"]])
    nu = np.full(max(s - 3, 2), np.nan)
    kappa = np.full(max(s - 3, 2), np.nan)
    nu[2: s - 3] = table[f"s{s}_nu"]
    kappa[2: s - 3] = table[f"s{s}_kappa"]
    coeffs = Rock4Coefficients(
        substeps=s,
        mu=mu,
        nu=nu,
        kappa=kappa,
        stability_extent=float(table[f"s{s}_extent"]),
        c=np.zeros(s + 1),
    )
    object.__setattr__(coeffs, "c", stage_abscissae(coeffs))

    report = validate_consistency(coeffs)
    if not report.passed:
        raise ConfigurationError(
            f"tabulated degree {s} fails fourth-order consistency: "
            f"max deviation {report.deviations.max():.3e}"
        )
    zs = np.linspace(-coeffs.stability_extent * (1.0 - 1e-9), 0.0, 200)
    mags = np.abs([rock4_amplification(coeffs, z) for z in zs])
    if np.max(mags) > 1.0 + STABILITY_SLACK:
        raise ConfigurationError(
            f"tabulated degree {s} violates |R| <= 1 on its stability interval"
        )
    return coeffs
