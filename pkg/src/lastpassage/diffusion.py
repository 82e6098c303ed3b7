"""Transient diffusion models on the positive half-line.

A model is described by its scale function and speed density in the gauge
where the scale is negative, strictly increasing, and vanishes at
infinity.  In that gauge the probability that the process started at
``x > z`` ever falls back to ``z`` is ``scale(x)/scale(z)``, which is what
every downstream computation (running cost, stopping boundary, value
curve, tail certificates in the simulator) is built on.

Besides the three power-law families (Bessel, squared Bessel, geometric
Brownian motion) there is an explosive family whose scale involves
``exp(c * x^(1-p))``; its scale blows up so fast at the origin that naive
products like ``scale(x) * speed_mass(x)`` overflow in floating point even
though the products themselves are O(1).  Models therefore carry optional
"stable product" callables which constructors override with cancellation-
free closed forms; generic fallbacks compose the primitives.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from ._quad import integrate, integrate_to_zero
from .errors import InvalidModelError, TransienceError
from .expressions import compile_expression

__all__ = [
    "OriginBoundary",
    "PowerLawFamily",
    "DiffusionModel",
    "ValidationReport",
    "make_bessel",
    "make_squared_bessel",
    "make_gbm",
    "make_explosive",
    "make_power_law",
    "model_from_coefficients",
    "model_from_spec",
    "load_model_file",
    "default_probe_grid",
    "validate_assumptions",
]

SCALE_TAIL_PROBE_FACTOR = 1e3
ORIGIN_PROBE_FACTOR = 1e-3


class OriginBoundary(enum.Enum):
    NATURAL = "natural"
    ENTRANCE = "entrance"


@dataclass(frozen=True)
class PowerLawFamily:
    """Scale ``-alpha * x^-mu`` with speed density ``beta * x^nu``."""

    alpha: float
    beta: float
    mu: float
    nu: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidModelError("alpha and beta must be positive")
        if not self.mu > 0:
            raise InvalidModelError("mu must be positive (scale must vanish at infinity)")
        if not self.nu > -1:
            raise InvalidModelError("nu must exceed -1 (speed must be integrable at 0)")


@dataclass(frozen=True)
class DiffusionModel:
    """Immutable bundle of the functions describing one diffusion.

    ``scale``/``scale_derivative``/``speed_density`` are always present.
    ``drift``/``diffusion`` are present when the model knows its SDE
    coefficients (required for simulation).  The ``*_mass`` callables are
    closed forms for ``integral_0^x speed_density`` and its stable
    products with the scale; when absent they are built by quadrature.
    """

    name: str
    scale: Callable[[float], float]
    scale_derivative: Callable[[float], float]
    speed_density: Callable[[float], float]
    origin_boundary: OriginBoundary
    drift: Callable[[float], float] | None = None
    diffusion: Callable[[float], float] | None = None
    power_law: PowerLawFamily | None = None
    explosive: bool = False
    origin_scale_divergent: bool | None = None
    scale_speed: Callable[[float], float] | None = None
    speed_mass: Callable[[float], float] | None = None
    scale_mass: Callable[[float], float] | None = None
    scale_derivative_mass: Callable[[float], float] | None = None
    sim_family: str | None = None
    sim_params: tuple[float, ...] = ()

    # -- stable product accessors -------------------------------------
    def scale_speed_at(self, x: float) -> float:
        """scale(x) * speed_density(x)."""
        if self.scale_speed is not None:
            return self.scale_speed(x)
        return self.scale(x) * self.speed_density(x)

    def speed_mass_at(self, x: float) -> float:
        """Mass of the speed measure on (0, x]."""
        if self.speed_mass is not None:
            return self.speed_mass(x)
        value, _ = integrate_to_zero(self.speed_density, x)
        return value

    def scale_mass_at(self, x: float) -> float:
        """scale(x) * speed_mass(x), safe near the origin."""
        if self.scale_mass is not None:
            return self.scale_mass(x)
        return self.scale(x) * self.speed_mass_at(x)

    def scale_derivative_mass_at(self, x: float) -> float:
        """scale_derivative(x) * speed_mass(x), safe near the origin."""
        if self.scale_derivative_mass is not None:
            return self.scale_derivative_mass(x)
        return self.scale_derivative(x) * self.speed_mass_at(x)

    def hitting_ratio(self, x: float, z: float) -> float:
        """P(process from x ever reaches z), i.e. min(scale(x)/scale(z), 1)."""
        return min(self.scale(x) / self.scale(z), 1.0)

    def requires_coefficients(self) -> None:
        if self.drift is None or self.diffusion is None:
            raise InvalidModelError(
                f"model {self.name!r} has no drift/diffusion coefficients; "
                "simulation needs them"
            )


@dataclass(frozen=True)
class ValidationReport:
    scale_diverges_at_zero: bool
    scale_vanishes_at_infinity: bool
    speed_integrable_at_zero: bool
    origin_boundary: OriginBoundary
    origin_consistent: bool | None
    notes: tuple[str, ...] = ()

    @property
    def all_passed(self) -> bool:
        return (
            self.scale_diverges_at_zero
            and self.scale_vanishes_at_infinity
            and self.speed_integrable_at_zero
        )


# ---------------------------------------------------------------------
# built-in families
# ---------------------------------------------------------------------

def _power_law_callables(fam: PowerLawFamily):
    a, b, mu, nu = fam.alpha, fam.beta, fam.mu, fam.nu
    scale = lambda x: -a * x ** -mu
    scale_derivative = lambda x: a * mu * x ** -(mu + 1.0)
    speed_density = lambda x: b * x**nu
    scale_speed = lambda x: -a * b * x ** (nu - mu)
    speed_mass = lambda x: b * x ** (nu + 1.0) / (nu + 1.0)
    scale_mass = lambda x: -a * b * x ** (nu - mu + 1.0) / (nu + 1.0)
    scale_derivative_mass = lambda x: a * b * mu * x ** (nu - mu) / (nu + 1.0)
    return dict(
        scale=scale,
        scale_derivative=scale_derivative,
        speed_density=speed_density,
        scale_speed=scale_speed,
        speed_mass=speed_mass,
        scale_mass=scale_mass,
        scale_derivative_mass=scale_derivative_mass,
    )


def make_bessel(delta: float) -> DiffusionModel:
    """Bessel process of dimension ``delta > 2``.

    Coefficients ``b(x) = (delta-1)/(2x)``, ``a(x) = 1``; scale
    ``-x^-(delta-2)``; speed density ``2 x^(delta-1) / (delta-2)``.  The
    origin is an entrance boundary.
    """
    if not delta > 2:
        raise TransienceError(f"Bessel dimension must exceed 2, got {delta}")
    fam = PowerLawFamily(alpha=1.0, beta=2.0 / (delta - 2.0), mu=delta - 2.0, nu=delta - 1.0)
    return DiffusionModel(
        name=f"bessel(delta={delta:g})",
        drift=lambda x: (delta - 1.0) / (2.0 * x),
        diffusion=lambda x: 1.0,
        origin_boundary=OriginBoundary.ENTRANCE,
        power_law=fam,
        origin_scale_divergent=True,
        sim_family="bessel",
        sim_params=(delta,),
        **_power_law_callables(fam),
    )


def make_squared_bessel(delta: float) -> DiffusionModel:
    """Squared Bessel process of dimension ``delta > 2``.

    Coefficients ``b(x) = delta``, ``a(x) = 2 sqrt(x)``; scale
    ``-x^-(delta-2)/2``; speed density ``x^((delta-2)/2) / (delta-2)``.
    The origin is an entrance boundary.
    """
    if not delta > 2:
        raise TransienceError(f"squared Bessel dimension must exceed 2, got {delta}")
    fam = PowerLawFamily(
        alpha=1.0, beta=1.0 / (delta - 2.0), mu=(delta - 2.0) / 2.0, nu=(delta - 2.0) / 2.0
    )
    return DiffusionModel(
        name=f"squared_bessel(delta={delta:g})",
        drift=lambda x: float(delta),
        diffusion=lambda x: 2.0 * math.sqrt(x),
        origin_boundary=OriginBoundary.ENTRANCE,
        power_law=fam,
        origin_scale_divergent=True,
        sim_family="squared_bessel",
        sim_params=(delta,),
        **_power_law_callables(fam),
    )


def make_gbm(lam: float, sigma: float) -> DiffusionModel:
    """Geometric Brownian motion ``dX = lam X dt + sigma X dB``.

    Transient iff ``kappa = lam/sigma^2 - 1/2 > 0``.  Scale
    ``-x^-2kappa / (2 kappa)``; speed density ``(2/sigma^2) x^(2kappa-1)``
    (the pairing that satisfies ``speed * a^2 * scale' = 2``).  The origin
    is a non-attractive natural boundary.
    """
    if not sigma > 0:
        raise InvalidModelError(f"sigma must be positive, got {sigma}")
    kappa = lam / sigma**2 - 0.5
    if not kappa > 0:
        raise TransienceError(
            f"geometric Brownian motion with lam={lam}, sigma={sigma} is not "
            f"transient (kappa={kappa:g} <= 0)"
        )
    fam = PowerLawFamily(
        alpha=1.0 / (2.0 * kappa), beta=2.0 / sigma**2, mu=2.0 * kappa, nu=2.0 * kappa - 1.0
    )
    return DiffusionModel(
        name=f"gbm(lam={lam:g},sigma={sigma:g})",
        drift=lambda x: lam * x,
        diffusion=lambda x: sigma * x,
        origin_boundary=OriginBoundary.NATURAL,
        power_law=fam,
        origin_scale_divergent=True,
        sim_family="gbm",
        sim_params=(lam, sigma),
        **_power_law_callables(fam),
    )


def make_explosive(lam: float, kappa: float, p: float) -> DiffusionModel:
    """Superlinear family ``b = lam k x^p + k^2 p x^(2p-1)/2``, ``a = k x^p``.

    For ``p > 1`` the process reaches infinity in finite time with positive
    probability.  The scale is ``1 - exp(E(x))`` with
    ``E(x) = 2 lam x^(1-p) / (k (p-1)) > 0``, which already vanishes at
    infinity (no shift needed) and falls to ``-inf`` at the origin; the
    speed density is ``x^-p exp(-E(x)) / (lam k)``.  Stable products use
    ``expm1`` so curve evaluation works at small ``x`` where ``exp(E)``
    alone overflows.
    """
    if not (lam > 0 and kappa > 0):
        raise InvalidModelError(f"lam and kappa must be positive, got {lam}, {kappa}")
    if not p > 1:
        raise TransienceError(f"explosive family needs p > 1, got {p}")
    c = 2.0 * lam / (kappa * (p - 1.0))  # E(x) = c * x^(1-p)

    def E(x: float) -> float:
        return c * x ** (1.0 - p)

    return DiffusionModel(
        name=f"explosive(lam={lam:g},kappa={kappa:g},p={p:g})",
        drift=lambda x: lam * kappa * x**p + 0.5 * kappa**2 * p * x ** (2.0 * p - 1.0),
        diffusion=lambda x: kappa * x**p,
        scale=lambda x: -math.expm1(E(x)),
        scale_derivative=lambda x: (2.0 * lam / kappa) * x**-p * math.exp(E(x)),
        speed_density=lambda x: x**-p * math.exp(-E(x)) / (lam * kappa),
        scale_speed=lambda x: x**-p * math.expm1(-E(x)) / (lam * kappa),
        speed_mass=lambda x: math.exp(-E(x)) / (2.0 * lam**2),
        scale_mass=lambda x: math.expm1(-E(x)) / (2.0 * lam**2),
        scale_derivative_mass=lambda x: x**-p / (lam * kappa),
        origin_boundary=OriginBoundary.NATURAL,
        explosive=True,
        origin_scale_divergent=True,
        sim_family="explosive",
        sim_params=(lam, kappa, p),
    )


def make_power_law(
    fam: PowerLawFamily, diffusion: Callable[[float], float] | None = None
) -> DiffusionModel:
    """Model from raw power-law data.

    Drift and diffusion stay abstract unless ``diffusion`` is supplied, in
    which case the drift is recovered from the scale equation
    ``a^2 s'' / 2 + b s' = 0``, giving ``b(x) = a(x)^2 (mu+1) / (2x)``.
    """
    mu = fam.mu
    drift = None
    if diffusion is not None:
        drift = lambda x: diffusion(x) ** 2 * (mu + 1.0) / (2.0 * x)
    return DiffusionModel(
        name=f"power_law(alpha={fam.alpha:g},beta={fam.beta:g},mu={fam.mu:g},nu={fam.nu:g})",
        drift=drift,
        diffusion=diffusion,
        origin_boundary=OriginBoundary.ENTRANCE if fam.nu - fam.mu > -1.0 else OriginBoundary.NATURAL,
        power_law=fam,
        origin_scale_divergent=True,
        **_power_law_callables(fam),
    )


# ---------------------------------------------------------------------
# user-supplied models
# ---------------------------------------------------------------------

def model_from_coefficients(
    name: str,
    drift: Callable[[float], float],
    diffusion: Callable[[float], float],
    anchor: float = 1.0,
    origin_boundary: OriginBoundary = OriginBoundary.NATURAL,
    *,
    tail_rel_tol: float = 1e-9,
) -> DiffusionModel:
    """Build scale and speed from SDE coefficients alone.

    The scale derivative is ``exp(-int_anchor^x 2 b / a^2)`` (normalised to
    1 at the anchor) and the scale itself is ``-int_x^inf scale'``, with
    the improper tail truncated adaptively to relative tolerance
    ``tail_rel_tol``.  Everything downstream is invariant under the
    positive factor this normalisation leaves free.
    """
    if anchor <= 0:
        raise InvalidModelError("anchor must be positive")

    def log_slope(y: float) -> float:
        return 2.0 * drift(y) / diffusion(y) ** 2

    def scale_derivative(x: float) -> float:
        if x <= 0:
            raise InvalidModelError("scale derivative requested at x <= 0")
        return math.exp(-integrate(log_slope, *sorted((anchor, x)), rel=1e-12)
                        * (1.0 if x >= anchor else -1.0))

    def scale(x: float) -> float:
        # -integral_x^inf scale'; truncate once a doubling step contributes
        # less than tail_rel_tol of the running total
        total = 0.0
        lo = x
        hi = max(2.0 * x, 2.0 * anchor)
        for _ in range(200):
            total += integrate(scale_derivative, lo, hi, rel=1e-11)
            seg_next = integrate(scale_derivative, hi, 2.0 * hi, rel=1e-11)
            if seg_next < tail_rel_tol * (total + seg_next):
                total += seg_next
                return -total
            total += seg_next
            lo, hi = 2.0 * hi, 4.0 * hi
        raise InvalidModelError(
            f"scale tail integral for {name!r} did not converge; "
            "the model does not look transient"
        )

    def speed_density(x: float) -> float:
        return 2.0 / (diffusion(x) ** 2 * scale_derivative(x))

    return DiffusionModel(
        name=name,
        drift=drift,
        diffusion=diffusion,
        scale=scale,
        scale_derivative=scale_derivative,
        speed_density=speed_density,
        origin_boundary=origin_boundary,
    )


_FAMILY_BUILDERS = {
    "bessel": lambda p: make_bessel(p["delta"]),
    "squared_bessel": lambda p: make_squared_bessel(p["delta"]),
    "gbm": lambda p: make_gbm(p.get("lambda", p.get("lam")), p["sigma"]),
    "explosive": lambda p: make_explosive(p.get("lambda", p.get("lam")), p["kappa"], p["p"]),
    "power_law": lambda p: make_power_law(
        PowerLawFamily(p["alpha"], p["beta"], p["mu"], p["nu"])
    ),
}


def model_from_spec(spec: Mapping) -> DiffusionModel:
    """Build a model from a parsed model-specification document."""
    try:
        family = spec["family"]
        params = spec.get("params", {})
    except (TypeError, KeyError) as exc:
        raise InvalidModelError(f"model spec must carry 'family' and 'params': {exc}") from exc
    if family in _FAMILY_BUILDERS:
        try:
            return _FAMILY_BUILDERS[family](params)
        except KeyError as exc:
            raise InvalidModelError(f"missing parameter for family {family!r}: {exc}") from exc
    if family == "custom":
        if "b" not in params or "a" not in params:
            raise InvalidModelError("custom models need expression strings 'b' and 'a'")
        drift = compile_expression(params["b"])
        diffusion = compile_expression(params["a"])
        origin = OriginBoundary(params.get("origin", "natural"))
        return model_from_coefficients(
            params.get("name", "custom"),
            drift,
            diffusion,
            anchor=float(params.get("anchor", params.get("z", 1.0))),
            origin_boundary=origin,
        )
    raise InvalidModelError(f"unknown model family {family!r}")


def load_model_file(path: str) -> DiffusionModel:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_spec(json.load(fh))


# ---------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------

def default_probe_grid(z: float, n: int = 200) -> np.ndarray:
    """Log-spaced grid on [1e-3 z, 1e3 z] bracketing every feature of interest."""
    return np.geomspace(ORIGIN_PROBE_FACTOR * z, SCALE_TAIL_PROBE_FACTOR * z, n)


def validate_assumptions(
    model: DiffusionModel, probe_grid: Sequence[float]
) -> ValidationReport:
    """Check the transience and integrability requirements on a grid.

    Raises :class:`InvalidModelError` if the sampled scale is not strictly
    increasing.  The origin-classification cross-check (entrance iff the
    scale is speed-integrable at 0) is advisory: it reports, never raises.
    """
    grid = np.asarray(list(probe_grid), dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidModelError("probe grid must be non-empty, positive and sorted")
    notes: list[str] = []

    svals = np.array([model.scale(x) for x in grid])
    if np.any(~np.isfinite(svals)):
        finite = np.isfinite(svals)
        if np.any(svals[~finite] > 0) or np.any(np.isnan(svals[~finite])):
            raise InvalidModelError("scale produced NaN or +inf on the probe grid")
        notes.append("scale overflows to -inf near the origin; treated as divergent")
        svals = svals[finite]
        grid_s = grid[finite]
    else:
        grid_s = grid
    if np.any(np.diff(svals) <= 0):
        raise InvalidModelError("sampled scale function is not strictly increasing")
    if np.any(svals >= 0):
        raise InvalidModelError("scale function must be negative in the normalised gauge")

    z_ref = grid[np.searchsorted(grid, math.sqrt(grid[0] * grid[-1]))]
    s_ref = model.scale(z_ref)

    if model.origin_scale_divergent:
        diverges = True
    else:
        s_lo = model.scale(grid[0])
        diverges = not math.isfinite(s_lo) or abs(s_lo) > 50.0 * abs(s_ref)
    vanishes = abs(model.scale(grid[-1])) < 0.5 * abs(s_ref)

    try:
        _, integrable = integrate_to_zero(
            model.speed_density, z_ref, raise_on_divergence=False
        )
    except Exception as exc:  # quadrature blow-up counts as failure
        integrable = False
        notes.append(f"speed integrability probe failed: {exc}")

    # advisory origin classification: entrance iff scale*speed is
    # integrable at the origin
    origin_consistent: bool | None
    try:
        _, sm_converges = integrate_to_zero(
            model.scale_speed_at, z_ref, raise_on_divergence=False
        )
        expected = OriginBoundary.ENTRANCE if sm_converges else OriginBoundary.NATURAL
        origin_consistent = expected is model.origin_boundary
        if not origin_consistent:
            notes.append(
                f"declared origin {model.origin_boundary.value} but scale*speed "
                f"integral suggests {expected.value}"
            )
    except Exception as exc:
        origin_consistent = None
        notes.append(f"origin cross-check failed: {exc}")

    return ValidationReport(
        scale_diverges_at_zero=bool(diverges),
        scale_vanishes_at_infinity=bool(vanishes),
        speed_integrable_at_zero=bool(integrable),
        origin_boundary=model.origin_boundary,
        origin_consistent=origin_consistent,
        notes=tuple(notes),
    )
