"""Optimal stopping boundary: the level ``r*`` where the speed-weighted
running cost integrates to zero.

``G(r) = integral_(0,r] cost * speed`` is negative for small ``r`` (the
cost is -1 below the target) and strictly increasing beyond the cost
root, so the boundary is the unique zero of ``G`` above the cost root.
A general quadrature backend brackets and refines that zero for any
model; power-law models also get a closed-form backend that reduces the
boundary equation to a scalar equation in ``u = r/z``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from ._quad import integrate
from .cost import CostFunction
from .diffusion import DiffusionModel, PowerLawFamily
from .errors import DivergenceError, InvalidModelError, NoRootError

BRACKET_GUARD = 1e12
RESIDUAL_REL_TOL = 1e-10


class SolveMethod(str, enum.Enum):
    CLOSED_FORM_POWER_LAW = "closed_form_power_law"
    GENERAL_QUADRATURE = "general_quadrature"


@dataclass(frozen=True)
class BoundarySolution:
    r_star: float
    cost_root: float
    method: SolveMethod
    residual: float
    bracket: tuple[float, float]
    iterations: int
    z: float


def boundary_integral(model: DiffusionModel, cf: CostFunction, r: float) -> float:
    """G(r), exploiting that the cost is exactly -1 on (0, z]."""
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    z = cf.z
    if r <= z:
        return -model.speed_mass_at(r)
    try:
        root_hint = cf.cost_root()
    except NoRootError:
        root_hint = None
    points = [root_hint] if root_hint is not None and z < root_hint < r else None
    above = integrate(cf.cost_speed, z, r, points=points)
    return -model.speed_mass_at(z) + above


def _abs_cost_integral(model: DiffusionModel, cf: CostFunction, r: float) -> float:
    below = model.speed_mass_at(min(r, cf.z))
    if r <= cf.z:
        return below
    return below + integrate(lambda y: abs(cf.cost_speed(y)), cf.z, r)


def solve_boundary(model: DiffusionModel, cf: CostFunction) -> BoundarySolution:
    """Quadrature backend: bracket ``G`` above the cost root, then Brent.

    The residual tolerance is scaled by ``integral |cost| d(speed)`` at the
    bracket midpoint so it means the same thing across families whose
    speed measures differ by orders of magnitude.
    """
    x_c = cf.cost_root()
    z = cf.z
    mass_z = model.speed_mass_at(z)

    def g(r: float) -> float:
        if r <= z:
            return -model.speed_mass_at(r)
        return -mass_z + integrate(cf.cost_speed, z, r, points=[x_c] if x_c < r else None)

    lo = x_c
    hi = 2.0 * x_c
    while g(hi) <= 0.0:
        lo = hi
        hi *= 2.0
        if hi > BRACKET_GUARD * z:
            raise DivergenceError(
                "boundary equation shows no sign change below the bracket guard; "
                "the speed-weighted cost never integrates to zero"
            )
    r_star, info = brentq(g, lo, hi, xtol=1e-13 * hi, rtol=4e-16, full_output=True)
    residual = g(r_star)
    tol_g = RESIDUAL_REL_TOL * _abs_cost_integral(model, cf, 0.5 * (lo + hi))
    if abs(residual) > max(tol_g, 1e-14):
        raise DivergenceError(
            f"boundary refinement stalled: |G(r*)| = {abs(residual):.3e} > {tol_g:.3e}"
        )
    return BoundarySolution(
        r_star=r_star,
        cost_root=x_c,
        method=SolveMethod.GENERAL_QUADRATURE,
        residual=residual,
        bracket=(lo, hi),
        iterations=info.iterations,
        z=z,
    )


# ---------------------------------------------------------------------
# closed-form power-law backend
# ---------------------------------------------------------------------

def _scalar_equation(u: float, mu: float, nu: float) -> float:
    """Boundary equation in u = r/z, scaled by u^-(nu+1) for overflow safety.

    Generic case: (nu-mu+1) u^(nu+1) - 2(nu+1) u^(nu-mu+1) + 2 mu = 0.
    Degenerate case nu = mu-1: u^mu - 2 mu ln(u) - 2 = 0.
    """
    if abs(nu - (mu - 1.0)) < 1e-12:
        return u**mu - 2.0 * mu * math.log(u) - 2.0
    return (nu - mu + 1.0) - 2.0 * (nu + 1.0) * u**-mu + 2.0 * mu * u ** -(nu + 1.0)


def _closed_form_residual(fam: PowerLawFamily, z: float, u: float) -> float:
    """Actual G(r) for the power-law family at r = u z."""
    b, mu, nu = fam.beta, fam.mu, fam.nu
    if abs(nu - (mu - 1.0)) < 1e-12:
        return b * z**mu * ((u**mu - 2.0) / mu - 2.0 * math.log(u))
    return b * z ** (nu + 1.0) * (
        (u ** (nu + 1.0) - 2.0) / (nu + 1.0)
        - 2.0 * (u ** (nu - mu + 1.0) - 1.0) / (nu - mu + 1.0)
    )


def solve_boundary_power_law(fam: PowerLawFamily, z: float) -> BoundarySolution:
    """Closed-form backend: scan, refine and filter roots of the scalar equation.

    The equation can have spurious roots below the admissibility threshold
    ``u > 2^(1/mu)`` (the cost root in u units); the scan covers
    ``u in (0, 1e6]`` on a log grid, refines every sign change, and errors
    unless exactly one admissible root survives.
    """
    if z <= 0:
        raise ValueError(f"target level must be positive, got {z}")
    mu, nu = fam.mu, fam.nu
    grid = np.geomspace(1e-6, 1e6, 4001)
    with np.errstate(over="ignore", divide="ignore"):
        vals = np.array([_scalar_equation(u, mu, nu) for u in grid])
    roots: list[float] = []
    iterations = 0
    for a, b_, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if not (np.isfinite(fa) and np.isfinite(fb)):
            continue
        if fa == 0.0:
            roots.append(a)
            continue
        if fa * fb < 0.0:
            root, info = brentq(
                _scalar_equation, a, b_, args=(mu, nu), xtol=1e-15, rtol=4e-16,
                full_output=True,
            )
            roots.append(root)
            iterations += info.iterations
    threshold = 2.0 ** (1.0 / mu)
    admissible = sorted(set(r for r in roots if r > threshold * (1.0 + 1e-12)))
    # collapse near-duplicates from adjacent grid cells
    deduped: list[float] = []
    for r in admissible:
        if not deduped or r > deduped[-1] * (1.0 + 1e-9):
            deduped.append(r)
    if len(deduped) != 1:
        raise DivergenceError(
            f"expected exactly one admissible boundary root above u={threshold:.6g}, "
            f"found {len(deduped)}: {deduped}"
        )
    u = deduped[0]
    return BoundarySolution(
        r_star=u * z,
        cost_root=threshold * z,
        method=SolveMethod.CLOSED_FORM_POWER_LAW,
        residual=_closed_form_residual(fam, z, u),
        bracket=(threshold * z, grid[-1] * z),
        iterations=iterations,
        z=z,
    )


def solve(model: DiffusionModel, cf: CostFunction, method: str = "auto") -> BoundarySolution:
    """Dispatch: closed form for power-law models, quadrature otherwise."""
    if method not in ("auto", "closed", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if method == "closed" and model.power_law is None:
        raise InvalidModelError(f"model {model.name!r} has no power-law form")
    if method in ("auto", "closed") and model.power_law is not None:
        return solve_boundary_power_law(model.power_law, cf.z)
    return solve_boundary(model, cf)
