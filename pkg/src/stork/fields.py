"""ODE right-hand sides consumed by the solvers.

Two kinds of problems are supported:

* velocity fields, dx/dt = v(x, t), the flow-matching form;
* semi-linear noise models, dx/dt = f(t) x + (g(t)^2 / (2 sigma(t))) eps(x, t),
  the noise-prediction form.

The solvers walk a time grid from its largest time down to its smallest,
updating x <- x - h * v.  Problems whose natural direction is forward in time
can be wrapped with :func:`time_reversed`.

Analytic test problems carry an exact-solution oracle so solver output can be
checked without any trained model in the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from typing import Callable

import numpy as np
from scipy.linalg import expm

from .errors import ConfigurationError

Array = np.ndarray

#: default resolution of the classical fourth-order reference integrator
REFERENCE_STEPS = 10_000


@dataclass(frozen=True)
class VelocityField:
    """A deterministic velocity field v(x, t) on R^dim."""

    dim: int
    eval: Callable[[Array, float], Array]
    name: str = "velocity"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("field dimension must be positive")

    def __call__(self, x: Array, t: float) -> Array:
        return self.eval(x, t)


@dataclass(frozen=True)
class SemiLinearNoiseModel:
    """Right-hand side f(t) x + (g(t)^2 / (2 sigma(t))) eps(x, t).

    ``alpha_bar`` is the signal scale used by Tweedie finishing; ``sigma``
    must stay positive over the solve interval.
    """

    dim: int
    f: Callable[[float], float]
    g: Callable[[float], float]
    sigma: Callable[[float], float]
    alpha_bar: Callable[[float], float]
    eps: Callable[[Array, float], Array]
    name: str = "noise-model"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError("model dimension must be positive")

    def rhs_from_eps(self, eps_value: Array, x: Array, t: float) -> Array:
        """Assemble the right-hand side from an externally supplied eps value."""
        sig = self.sigma(t)
        if sig <= 0.0:
            raise ConfigurationError(f"sigma({t}) = {sig} is not positive")
        return self.f(t) * x + (self.g(t) ** 2 / (2.0 * sig)) * eps_value

    def rhs(self, x: Array, t: float) -> Array:
        """Full right-hand side, evaluating the noise prediction internally."""
        return self.rhs_from_eps(self.eps(x, t), x, t)


@dataclass(frozen=True)
class GuidedField:
    """Classifier-free guidance: an affine combination of two fields.

    ``guidance_scale`` weights the conditional branch; the combination is
    scale * cond + (1 - scale) * uncond, so scale 1 returns the conditional
    output exactly and scale 0 the unconditional one.
    """

    cond: VelocityField | SemiLinearNoiseModel
    uncond: VelocityField | SemiLinearNoiseModel
    guidance_scale: float

    def __post_init__(self):
        if type(self.cond) is not type(self.uncond):
            raise ConfigurationError("cond and uncond must be the same kind of field")
        if self.cond.dim != self.uncond.dim:
            raise ConfigurationError(
                f"cond dim {self.cond.dim} != uncond dim {self.uncond.dim}"
            )
        if self.guidance_scale < 0.0:
            raise ConfigurationError("guidance_scale must be nonnegative")

    @property
    def dim(self) -> int:
        return self.cond.dim

    def eval(self, x: Array, t: float) -> Array:
        return cfg_combine(self, x, t)

    def __call__(self, x: Array, t: float) -> Array:
        return cfg_combine(self, x, t)


def cfg_combine(guided: GuidedField, x: Array, t: float) -> Array:
    """Combine conditional and unconditional outputs at guidance_scale.

    For velocity fields the raw outputs are combined; for noise models the
    eps predictions are combined (the linear drift term is shared).
    """
    s = guided.guidance_scale
    if isinstance(guided.cond, SemiLinearNoiseModel):
        c = guided.cond.eps(x, t)
        u = guided.uncond.eps(x, t)
    else:
        c = guided.cond.eval(x, t)
        u = guided.uncond.eval(x, t)
    if s == 1.0:
        return c
    if s == 0.0:
        return u
    return s * c + (1.0 - s) * u


def guided_noise_model(guided: GuidedField) -> SemiLinearNoiseModel:
    """View a guided pair of noise models as a single noise model."""
    if not isinstance(guided.cond, SemiLinearNoiseModel):
        raise ConfigurationError("guided_noise_model requires noise-model branches")
    base = guided.cond
    return SemiLinearNoiseModel(
        dim=base.dim,
        f=base.f,
        g=base.g,
        sigma=base.sigma,
        alpha_bar=base.alpha_bar,
        eps=lambda x, t: cfg_combine(guided, x, t),
        name=f"guided({base.name}, scale={guided.guidance_scale})",
    )


@dataclass(frozen=True)
class AnalyticProblem:
    """A field together with an exact-solution oracle.

    ``oracle(x_init, t_init, t_final)`` returns the exact state reached by
    following the ODE from t_init to t_final (either direction).
    ``stiffness_scale`` is the largest |eigenvalue| for linear instances,
    informational only.
    """

    field: VelocityField | SemiLinearNoiseModel
    oracle: Callable[[Array, float, float], Array]
    stiffness_scale: float = 0.0
    name: str = dataclass_field(default="problem")


def reference_solve(
    problem_field: VelocityField | SemiLinearNoiseModel | GuidedField,
    x_init: Array,
    t_init: float,
    t_final: float,
    steps: int = REFERENCE_STEPS,
) -> Array:
    """Classical fourth-order reference integration from t_init to t_final.

    Independent of the stabilized solvers; used as the oracle for problems
    without a closed form.  Handles both time directions via a signed step.
    """
    if steps < 1:
        raise ConfigurationError("reference integration needs at least one step")
    rhs = (
        problem_field.rhs
        if isinstance(problem_field, SemiLinearNoiseModel)
        else problem_field.eval
    )
    x = np.asarray(x_init, dtype=float).copy()
    h = (t_final - t_init) / steps
    t = t_init
    for _ in range(steps):
        k1 = rhs(x, t)
        k2 = rhs(x + 0.5 * h * k1, t + 0.5 * h)
        k3 = rhs(x + 0.5 * h * k2, t + 0.5 * h)
        k4 = rhs(x + h * k3, t + h)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return x


def time_reversed(field: VelocityField, t_lo: float, t_hi: float) -> VelocityField:
    """Adapt a forward-in-time field to the solver's decreasing-time walk.

    Solving the reflected field from t_hi down to t_lo reproduces the forward
    solution of ``field`` from t_lo to t_hi; the state at reflected time tau
    equals the forward state at t_lo + t_hi - tau.
    """
    pivot = t_lo + t_hi

    def eval_reflected(x: Array, tau: float) -> Array:
        return -field.eval(x, pivot - tau)

    return VelocityField(
        dim=field.dim, eval=eval_reflected, name=f"reversed({field.name})"
    )


def make_stiff_scalar(lam: float) -> AnalyticProblem:
    """Scalar linear problem dx/dt = lam * x with exponential oracle."""
    if lam == 0.0 or not math.isfinite(lam):
        raise ConfigurationError("lambda must be finite and nonzero")

    field = VelocityField(
        dim=1,
        eval=lambda x, t: lam * np.asarray(x, dtype=float),
        name=f"stiff-scalar(lambda={lam})",
    )

    def oracle(x_init: Array, t_init: float, t_final: float) -> Array:
        return np.asarray(x_init, dtype=float) * math.exp(lam * (t_final - t_init))

    return AnalyticProblem(
        field=field, oracle=oracle, stiffness_scale=abs(lam), name=field.name
    )


def make_linear_system(matrix: Array) -> AnalyticProblem:
    """Linear system dx/dt = A x; oracle via scaling-and-squaring expm."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigurationError("matrix must be square")
    dim = a.shape[0]

    field = VelocityField(
        dim=dim, eval=lambda x, t: a @ np.asarray(x, dtype=float), name="linear-system"
    )

    def oracle(x_init: Array, t_init: float, t_final: float) -> Array:
        return expm(a * (t_final - t_init)) @ np.asarray(x_init, dtype=float)

    scale = float(np.max(np.abs(np.linalg.eigvals(a)))) if dim else 0.0
    return AnalyticProblem(
        field=field, oracle=oracle, stiffness_scale=scale, name=field.name
    )


def vp_alpha_bar(t: float) -> float:
    """Signal scale of the built-in variance-preserving schedule."""
    return math.cos(0.5 * math.pi * t)


def vp_sigma(t: float) -> float:
    """Noise scale of the built-in variance-preserving schedule."""
    return math.sin(0.5 * math.pi * t)


def _vp_f(t: float) -> float:
    # d log(alpha_bar)/dt for alpha_bar = cos(pi t / 2)
    return -0.5 * math.pi * math.tan(0.5 * math.pi * t)


def _vp_g(t: float) -> float:
    # g^2 = d(sigma^2)/dt - 2 f sigma^2 = pi tan(pi t / 2)
    return math.sqrt(math.pi * math.tan(0.5 * math.pi * t))


def make_gaussian_vp(
    mu0: Array, s0: float, reference_steps: int = REFERENCE_STEPS
) -> AnalyticProblem:
    """Noise model whose eps is the exact predictor for N(mu0, s0^2 I) data.

    Uses the smooth variance-preserving pair alpha_bar = cos(pi t/2),
    sigma = sin(pi t/2).  The resulting ODE is linear in x; the oracle is a
    high-resolution fourth-order reference run.
    """
    if s0 <= 0.0:
        raise ConfigurationError("s0 must be positive")
    mu = np.atleast_1d(np.asarray(mu0, dtype=float))

    def eps(x: Array, t: float) -> Array:
        ab = vp_alpha_bar(t)
        sig = vp_sigma(t)
        return sig * (np.asarray(x, dtype=float) - ab * mu) / (ab * ab * s0 * s0 + sig * sig)

    model = SemiLinearNoiseModel(
        dim=mu.size,
        f=_vp_f,
        g=_vp_g,
        sigma=vp_sigma,
        alpha_bar=vp_alpha_bar,
        eps=eps,
        name=f"gaussian-vp(s0={s0})",
    )

    def oracle(x_init: Array, t_init: float, t_final: float) -> Array:
        return reference_solve(model, x_init, t_init, t_final, steps=reference_steps)

    return AnalyticProblem(field=model, oracle=oracle, stiffness_scale=0.0, name=model.name)


def gaussian_flow_velocity(mu1: Array, s1: float, x: Array, t: float) -> Array:
    """Closed-form marginal velocity of the linear interpolant.

    x_t = (1 - t) z + t x1 with z ~ N(0, I) and x1 ~ N(mu1, s1^2 I) gives the
    conditional expectation E[x1 - z | x_t] in closed form:

        v(x, t) = mu1 + (t s1^2 - (1 - t)) / ((1 - t)^2 + t^2 s1^2) * (x - t mu1)

    Note the velocity is not identically zero for mu1 = 0, s1 = 1: the two
    endpoints coincide in distribution but the interpolant's marginal variance
    dips in between, so the drift contracts toward the origin for t < 1/2 and
    expands after.
    """
    mu = np.atleast_1d(np.asarray(mu1, dtype=float))
    b = 1.0 - t
    var = b * b + t * t * s1 * s1
    k = (t * s1 * s1 - b) / var
    return mu + k * (np.asarray(x, dtype=float) - t * mu)


def make_gaussian_flow(
    mu1: Array, s1: float, reference_steps: int = REFERENCE_STEPS
) -> AnalyticProblem:
    """Velocity field transporting N(0, I) to N(mu1, s1^2 I); linear oracle."""
    if s1 <= 0.0:
        raise ConfigurationError("s1 must be positive")
    mu = np.atleast_1d(np.asarray(mu1, dtype=float))

    field = VelocityField(
        dim=mu.size,
        eval=lambda x, t: gaussian_flow_velocity(mu, s1, x, t),
        name=f"gaussian-flow(s1={s1})",
    )

    def oracle(x_init: Array, t_init: float, t_final: float) -> Array:
        return reference_solve(field, x_init, t_init, t_final, steps=reference_steps)

    return AnalyticProblem(field=field, oracle=oracle, stiffness_scale=0.0, name=field.name)
