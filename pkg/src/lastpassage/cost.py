"""Running cost of tracking the final visit to a target level.

For a target ``z`` the cost rate at state ``x`` is
``1 - 2 * min(scale(x)/scale(z), 1)``: the instantaneous penalty for not
having stopped yet is ``+1`` once a return to ``z`` has become unlikely
and ``-1`` while it is still certain.  The function is -1 on ``(0, z]``,
nondecreasing, approaches 1 at infinity, and has a single root at
``scale^-1(scale(z)/2)`` above ``z``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .diffusion import DiffusionModel
from .errors import NoRootError

ROOT_VALUE_TOL = 1e-10
ROOT_X_RTOL = 1e-12
BRACKET_GUARD = 1e12


@dataclass(frozen=True)
class CostFunction:
    model: DiffusionModel
    z: float
    s_z: float = 0.0

    def __post_init__(self):
        if not self.z > 0:
            raise ValueError(f"target level must be positive, got {self.z}")
        object.__setattr__(self, "s_z", self.model.scale(self.z))
        if not self.s_z < 0:
            raise ValueError("scale(z) must be negative in the normalised gauge")

    def __call__(self, x: float) -> float:
        return self.cost_at(x)

    def cost_at(self, x: float) -> float:
        if x <= 0:
            raise ValueError(f"cost is defined on x > 0, got {x}")
        ratio = self.model.scale(x) / self.s_z
        return 1.0 - 2.0 * min(ratio, 1.0)

    def cost_speed(self, x: float) -> float:
        """cost(x) * speed_density(x), using the model's stable product."""
        if x <= self.z:
            return -self.model.speed_density(x)
        return self.model.speed_density(x) - 2.0 * self.model.scale_speed_at(x) / self.s_z

    def scale_cost_speed(self, x: float) -> float:
        """scale(x) * cost(x) * speed_density(x) for the value integrals."""
        sm = self.model.scale_speed_at(x)
        if x <= self.z:
            return -sm
        return sm - 2.0 * self.model.scale(x) * sm / self.s_z

    def cost_root(self) -> float:
        """The unique zero of the cost, by bracketed bisection above z.

        The bracket's upper end doubles until the cost is positive; models
        whose scale fails to vanish at infinity never get there and raise
        :class:`NoRootError` once the guard ``1e12 * z`` is exceeded.
        """
        lo = self.z
        hi = 2.0 * self.z
        while self.cost_at(hi) <= 0.0:
            hi *= 2.0
            if hi > BRACKET_GUARD * self.z:
                raise NoRootError(
                    "cost never becomes positive; scale(x) does not vanish as x grows"
                )
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.cost_at(mid) < 0.0:
                lo = mid
            else:
                hi = mid
            if hi - lo <= ROOT_X_RTOL * hi and abs(self.cost_at(hi)) < ROOT_VALUE_TOL:
                break
        return hi
