"""Value of the optimal threshold rule and the free-boundary checks.

For a solved boundary ``r*`` the value at ``x < r*`` is

    V(x) = -scale(x) * I(x) - integral_x^r* scale * cost d(speed),
    I(x) = integral_(0,x] cost d(speed),

and ``V = 0`` beyond the boundary.  The derivative has the closed form
``V'(x) = -scale'(x) * I(x)``, which the verifier uses directly so the
second derivative can be formed by differencing an analytic quantity
rather than differencing quadrature noise twice.

Power-law models admit explicit formulas (three branches, depending on
whether ``nu - mu`` hits -1 or ``mu`` - 1, where logarithms replace
powers); these serve as the fast backend and as an independent check of
the quadrature route.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._quad import integrate, integrate_to_zero
from .cost import CostFunction
from .diffusion import DiffusionModel, OriginBoundary, PowerLawFamily
from .solver import BoundarySolution

__all__ = [
    "CurveMethod",
    "ValueCurve",
    "VerificationReport",
    "expected_functional",
    "value_at",
    "value_derivative_at",
    "value_closed_form_power_law",
    "build_value_curve",
    "origin_limit",
    "verify_free_boundary",
    "default_curve_grid",
]

SPECIAL_CASE_SNAP = 1e-6


class CurveMethod(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature"


# ---------------------------------------------------------------------
# expected additive functionals of threshold rules
# ---------------------------------------------------------------------

def expected_functional(
    model: DiffusionModel, f: Callable[[float], float], x: float, r: float
) -> float:
    """E_x of ``integral_0^tau f(X_t) dt`` for the rule "stop at or above r".

    Equals ``(scale(r)-scale(x)) * integral_(0,x] f d(speed) +
    integral_x^r (scale(r)-scale(y)) f d(speed)`` below the threshold and
    0 at or above it.  ``f`` must be continuous with a finite limit at 0
    (caller's responsibility).
    """
    if x <= 0 or r <= 0:
        raise ValueError("x and r must be positive")
    if x >= r:
        return 0.0
    s_r = model.scale(r)
    s_x = model.scale(x)
    inner, _ = integrate_to_zero(lambda y: f(y) * model.speed_density(y), x)
    outer = integrate(
        lambda y: (s_r - model.scale(y)) * f(y) * model.speed_density(y), x, r
    )
    return (s_r - s_x) * inner + outer


# ---------------------------------------------------------------------
# quadrature backend
# ---------------------------------------------------------------------

def _cost_integral(model: DiffusionModel, cf: CostFunction, x: float, x_c: float) -> float:
    """I(x) = integral_(0,x] cost d(speed)."""
    if x <= cf.z:
        return -model.speed_mass_at(x)
    points = [x_c] if cf.z < x_c < x else None
    return -model.speed_mass_at(cf.z) + integrate(cf.cost_speed, cf.z, x, points=points)


def _tail_integral(cf: CostFunction, a: float, b: float, x_c: float) -> float:
    """integral_a^b scale * cost d(speed), split at the kink and sign change."""
    points = [p for p in (cf.z, x_c) if a < p < b]
    return integrate(cf.scale_cost_speed, a, b, points=points or None)


def value_at(
    model: DiffusionModel, cf: CostFunction, sol: BoundarySolution, x: float
) -> float:
    """Value of the solved rule at ``x`` by quadrature (0 at and above r*)."""
    if x <= 0:
        raise ValueError(f"x must be positive, got {x}")
    if x >= sol.r_star:
        return 0.0
    x_c = sol.cost_root
    if x <= cf.z:
        # -scale(x)*I(x) = scale(x)*speed_mass(x): use the stable product
        head = model.scale_mass_at(x)
    else:
        head = -model.scale(x) * _cost_integral(model, cf, x, x_c)
    return head - _tail_integral(cf, x, sol.r_star, x_c)


def value_derivative_at(
    model: DiffusionModel, cf: CostFunction, sol: BoundarySolution, x: float
) -> float:
    """V'(x) = -scale'(x) * I(x); zero at and above the boundary."""
    if x <= 0:
        raise ValueError(f"x must be positive, got {x}")
    if x >= sol.r_star:
        return 0.0
    if x <= cf.z:
        return model.scale_derivative_mass_at(x)
    return -model.scale_derivative(x) * _cost_integral(model, cf, x, sol.cost_root)


# ---------------------------------------------------------------------
# closed forms for power-law models
# ---------------------------------------------------------------------

def _branch(mu: float, nu: float) -> str:
    if abs(nu - (mu - 1.0)) < SPECIAL_CASE_SNAP:
        return "log_low"      # nu = mu - 1: logs appear below the target
    if abs(nu - (2.0 * mu - 1.0)) < SPECIAL_CASE_SNAP:
        return "log_high"     # nu = 2mu - 1: logs appear in the boundary terms
    return "generic"


def value_closed_form_power_law(
    fam: PowerLawFamily, z: float, sol: BoundarySolution, x: float
) -> float:
    """Explicit value for scale ``-alpha x^-mu``, speed ``beta x^nu``.

    Parameters within ``1e-6`` of a degenerate exponent combination are
    snapped onto the corresponding logarithmic branch; the generic branch
    has a removable singularity there and is numerically useless nearby.
    """
    if x <= 0:
        raise ValueError(f"x must be positive, got {x}")
    if x >= sol.r_star:
        return 0.0
    a, b = fam.alpha, fam.beta
    mu, nu = fam.mu, fam.nu
    u = sol.r_star / z
    w = x / z
    branch = _branch(mu, nu)
    if branch == "log_low":
        nu = mu - 1.0
        if w <= 1.0:
            return a * b * (
                (2.0 / mu) * u**-mu + math.log(u) + math.log(w) - 3.0 / mu
            )
        return a * b * (
            (2.0 / mu) * u**-mu
            - (4.0 / mu) * w**-mu
            - 2.0 * w**-mu * math.log(w)
            + math.log(u)
            - math.log(w)
            + 1.0 / mu
        )
    if branch == "log_high":
        nu = 2.0 * mu - 1.0
        zmu = z**mu
        if w <= 1.0:
            return a * b * zmu * (
                u**mu / mu + w**mu / (2.0 * mu) - 2.0 * math.log(u) - 2.0 / mu
            )
        return a * b * zmu * (
            u**mu / mu
            - w**mu / (2.0 * mu)
            + w**-mu / mu
            - 2.0 * math.log(u)
            + 2.0 * math.log(w)
            - 2.0 / mu
        )
    d1 = nu - mu + 1.0
    d2 = nu - 2.0 * mu + 1.0
    lead = a * b * z**d1
    if w <= 1.0:
        return lead * (
            u**d1 / d1
            - 2.0 * u**d2 / d2
            + mu * w**d1 / (d1 * (nu + 1.0))
            + 2.0 * mu / (d1 * d2)
        )
    return lead * (
        u**d1 / d1
        - 2.0 * u**d2 / d2
        - mu * w**d1 / (d1 * (nu + 1.0))
        + 2.0 * mu * w**d2 / (d1 * d2)
        + 2.0 * mu * w**-mu / (d1 * (nu + 1.0))
    )


def _closed_form_derivative(fam: PowerLawFamily, z: float, sol: BoundarySolution, x: float) -> float:
    """V' for power-law models from -scale' * I with closed-form I."""
    if x >= sol.r_star:
        return 0.0
    a, b, mu, nu = fam.alpha, fam.beta, fam.mu, fam.nu
    if x <= z:
        cost_int = -b * x ** (nu + 1.0) / (nu + 1.0)
    elif abs(nu - (mu - 1.0)) < SPECIAL_CASE_SNAP:
        cost_int = b * (
            (x**mu - 2.0 * z**mu) / mu - 2.0 * z**mu * math.log(x / z)
        )
    else:
        d1 = nu - mu + 1.0
        cost_int = b * (
            (x ** (nu + 1.0) - 2.0 * z ** (nu + 1.0)) / (nu + 1.0)
            - 2.0 * z**mu * (x**d1 - z**d1) / d1
        )
    return -a * mu * x ** -(mu + 1.0) * cost_int


# ---------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------

@dataclass
class ValueCurve:
    grid: np.ndarray
    values: np.ndarray
    derivative: np.ndarray
    r_star: float
    method: list[CurveMethod]
    origin_limit: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("x,V,Vprime,method\n")
        for x, v, dv, m in zip(self.grid, self.values, self.derivative, self.method):
            buf.write(f"{x:.17g},{v:.17g},{dv:.17g},{m.value}\n")
        return buf.getvalue()


def default_curve_grid(z: float, r_star: float, n: int = 400) -> np.ndarray:
    """Log-spaced on (1e-3 z, z], linear on [z, 1.2 r*]."""
    n_low = n // 2
    low = np.geomspace(1e-3 * z, z, n_low, endpoint=False)
    high = np.linspace(z, 1.2 * r_star, n - n_low)
    return np.concatenate([low, high])


def build_value_curve(
    model: DiffusionModel,
    cf: CostFunction,
    sol: BoundarySolution,
    grid: Sequence[float] | None = None,
    backend: str = "auto",
) -> ValueCurve:
    """Sample the value and its derivative on a grid.

    ``backend="auto"`` uses the closed form for power-law models and
    quadrature otherwise; ``"quadrature"`` forces the general route (used
    by the cross-validation tests).
    """
    if backend not in ("auto", "closed", "quadrature"):
        raise ValueError(f"unknown backend {backend!r}")
    xs = (
        np.asarray(list(grid), dtype=float)
        if grid is not None
        else default_curve_grid(cf.z, sol.r_star)
    )
    if np.any(xs <= 0):
        raise ValueError("curve grid must be positive")
    use_closed = backend in ("auto", "closed") and model.power_law is not None
    if backend == "closed" and model.power_law is None:
        raise ValueError(f"model {model.name!r} has no closed-form value")
    values = np.empty(xs.size)
    deriv = np.empty(xs.size)
    if use_closed:
        fam = model.power_law
        for i, x in enumerate(xs):
            values[i] = value_closed_form_power_law(fam, cf.z, sol, x)
            deriv[i] = _closed_form_derivative(fam, cf.z, sol, x)
        methods = [CurveMethod.CLOSED_FORM] * xs.size
    else:
        for i, x in enumerate(xs):
            values[i] = value_at(model, cf, sol, x)
            deriv[i] = value_derivative_at(model, cf, sol, x)
        methods = [CurveMethod.QUADRATURE] * xs.size
    return ValueCurve(
        grid=xs,
        values=values,
        derivative=deriv,
        r_star=sol.r_star,
        method=methods,
        origin_limit=origin_limit(model, cf, sol),
    )


def origin_limit(model: DiffusionModel, cf: CostFunction, sol: BoundarySolution) -> float:
    """lim V(x) as x -> 0+: finite for entrance-type origins, else -inf.

    The head term vanishes in the limit, so the limit is
    ``-integral_(0,r*] scale * cost d(speed)``; divergence of the ladder
    at the origin is reported as ``-inf`` rather than raised.
    """
    head, converged = integrate_to_zero(
        lambda y: cf.scale_cost_speed(y), cf.z, raise_on_divergence=False
    )
    if not converged:
        return -math.inf
    return -(head + _tail_integral(cf, cf.z, sol.r_star, sol.cost_root))


# ---------------------------------------------------------------------
# free-boundary verification
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationReport:
    ode_residual_max: float
    boundary_value_ratio: float
    smooth_fit_normalized: float
    kink_computed: float
    kink_expected: float
    origin_boundary: OriginBoundary
    origin_limit: float
    origin_check_passed: bool
    nonpositive: bool
    monotone_below_cost_root: bool
    n_interior: int

    @property
    def kink_relative_deviation(self) -> float:
        return abs(self.kink_computed - self.kink_expected) / abs(self.kink_expected)


def _interior_grid(z: float, r_star: float, n: int) -> np.ndarray:
    lo = 0.05 * z
    n_low = n // 3
    low = np.geomspace(lo, z, n_low, endpoint=False)
    high = np.linspace(z, r_star, n - n_low + 2)[1:-1]
    return np.concatenate([low, high])


def verify_free_boundary(
    model: DiffusionModel,
    cf: CostFunction,
    sol: BoundarySolution,
    n_interior: int = 100,
    fd_step: float | None = None,
) -> VerificationReport:
    """Numerically check everything the solved rule is supposed to satisfy.

    - the interior ODE ``a^2 V''/2 + b V' = -cost`` via second-order
      central differences of the analytic first derivative;
    - value match and smooth fit at the boundary (smooth fit normalised by
      ``scale'(r*) * integral |cost| d(speed)`` so the number is
      dimensionless);
    - the second-derivative kink at the boundary,
      ``V''(r*-) = -2 cost(r*)/a^2(r*)`` against 0 from the right;
    - origin behaviour per the declared boundary type;
    - global sign and shape properties of the curve.
    """
    model.requires_coefficients()
    z, r_star = cf.z, sol.r_star
    h = fd_step if fd_step is not None else max(1e-4 * r_star, 1e-6)

    dv = lambda x: value_derivative_at(model, cf, sol, x)

    grid = _interior_grid(z, r_star, n_interior)
    worst = 0.0
    for x in grid:
        if x + h >= r_star:
            continue
        d2 = (dv(x + h) - dv(x - h)) / (2.0 * h)
        d1 = dv(x)
        lhs = 0.5 * model.diffusion(x) ** 2 * d2 + model.drift(x) * d1
        c = cf.cost_at(x)
        scale_ref = 0.5 * model.diffusion(x) ** 2 * abs(d2) + abs(model.drift(x) * d1) + abs(c)
        worst = max(worst, abs(lhs + c) / scale_ref)

    v_at_boundary = value_at(model, cf, sol, r_star * (1.0 - 1e-15))
    v_at_z = value_at(model, cf, sol, z)
    boundary_ratio = abs(v_at_boundary) / abs(v_at_z)

    from .solver import _abs_cost_integral  # local import to avoid cycle at module load

    smooth_scale = model.scale_derivative(r_star) * _abs_cost_integral(model, cf, r_star)
    smooth_fit = abs(dv(r_star * (1.0 - 1e-15))) / smooth_scale

    # one-sided second-order difference of V' from the left at r*
    kink_left = (
        3.0 * dv(r_star * (1.0 - 1e-15)) - 4.0 * dv(r_star - h) + dv(r_star - 2.0 * h)
    ) / (2.0 * h)
    kink_expected = -2.0 * cf.cost_at(r_star) / model.diffusion(r_star) ** 2

    o_limit = origin_limit(model, cf, sol)
    if model.origin_boundary is OriginBoundary.NATURAL:
        origin_ok = o_limit == -math.inf or o_limit < -1e3 * abs(v_at_z)
    else:
        origin_ok = math.isfinite(o_limit)

    curve_vals = np.array([value_at(model, cf, sol, x) for x in grid])
    nonpositive = bool(np.all(curve_vals <= 1e-12))
    below_root = grid[grid <= sol.cost_root]
    monotone = bool(all(dv(x) >= -1e-12 for x in below_root))

    return VerificationReport(
        ode_residual_max=worst,
        boundary_value_ratio=boundary_ratio,
        smooth_fit_normalized=smooth_fit,
        kink_computed=kink_left,
        kink_expected=kink_expected,
        origin_boundary=model.origin_boundary,
        origin_limit=o_limit,
        origin_check_passed=bool(origin_ok),
        nonpositive=nonpositive,
        monotone_below_cost_root=monotone,
        n_interior=int(grid.size),
    )
