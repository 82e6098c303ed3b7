"""Adaptive quadrature helpers shared by the solver and valuation code.

Integrals with a possibly-singular (but integrable) endpoint at zero are
computed as a ladder of proper integrals on geometrically shrinking
segments ``[b*10^-(k+1), b*10^-k]``; the ladder stops once a segment's
contribution is negligible, and declares divergence when segment
contributions stop decaying.
"""

from __future__ import annotations

from typing import Callable, Sequence

from scipy.integrate import quad

from .errors import IntegrabilityError

REL_TOL = 1e-10
ABS_FLOOR = 1e-14

_LADDER_MAX_LEVELS = 250
_LADDER_STALL_CHECK = 50
_LADDER_STALL_RATIO = 0.999


def _quad(f, lo, hi, rel, abs_floor):
    out = quad(f, lo, hi, epsabs=abs_floor, epsrel=rel, limit=200, full_output=1)
    return out[0]


def integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    *,
    rel: float = REL_TOL,
    abs_floor: float = ABS_FLOOR,
    points: Sequence[float] | None = None,
) -> float:
    """Integrate ``f`` on the proper interval ``[a, b]``.

    ``points`` marks interior breakpoints (kinks of the integrand); the
    interval is split there so the adaptive rule never straddles a kink.
    Wide intervals are additionally split geometrically, which keeps the
    global rule honest for integrands that live on very different scales
    at the two ends.
    """
    if b <= a:
        return 0.0
    cuts = {a, b}
    if points:
        cuts.update(p for p in points if a < p < b)
    # geometric interior splits for intervals spanning many decades
    if a > 0 and b / a > 1e3:
        lo = a * 10.0
        while lo < b / 10.0:
            cuts.add(lo)
            lo *= 10.0
    ordered = sorted(cuts)
    total = 0.0
    for lo, hi in zip(ordered[:-1], ordered[1:]):
        total += _quad(f, lo, hi, rel, abs_floor)
    return total


def integrate_to_zero(
    f: Callable[[float], float],
    b: float,
    *,
    rel: float = REL_TOL,
    abs_floor: float = ABS_FLOOR,
    raise_on_divergence: bool = True,
) -> tuple[float, bool]:
    """Integrate ``f`` on ``(0, b]`` by geometric endpoint refinement.

    Returns ``(value, converged)``.  When segment contributions stall
    (log-type or slower decay at the origin) the ladder either raises
    :class:`IntegrabilityError` or, with ``raise_on_divergence=False``,
    returns the partial sum and ``False`` so callers can treat divergence
    as a detected property rather than a failure.  Cleanly geometric
    tails are extrapolated rather than iterated into underflow.
    """
    if b <= 0.0:
        raise ValueError("upper endpoint must be positive")
    total = 0.0
    hi = b
    last_seg = 0.0
    ratios: list[float] = []
    small_streak = 0
    for level in range(_LADDER_MAX_LEVELS):
        lo = b * 10.0 ** (-(level + 1))
        seg = _quad(f, lo, hi, rel, abs_floor)
        total += seg
        if last_seg != 0.0 and seg != 0.0:
            ratios.append(abs(seg) / abs(last_seg))
        last_seg = seg
        hi = lo
        if abs(seg) < max(rel * abs(total), abs_floor):
            small_streak += 1
            if small_streak >= 2:
                return total, True
        else:
            small_streak = 0
        stalled = (
            level >= _LADDER_STALL_CHECK
            and len(ratios) >= 10
            and min(ratios[-10:]) > _LADDER_STALL_RATIO
        )
        if stalled or lo < 1e-280:
            break
    if ratios and last_seg != 0.0:
        r = ratios[-1]
        if r < _LADDER_STALL_RATIO:
            # geometric tail: seg * (r + r^2 + ...) = seg * r / (1 - r)
            return total + last_seg * r / (1.0 - r), True
    if raise_on_divergence:
        raise IntegrabilityError(
            "integral does not converge at the origin "
            f"(segment magnitude {abs(last_seg):.3e} is not decaying)"
        )
    return total, False
