import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.models.symbols import SymbolFunction


def smoothstep(s):
    """Quintic ramp: 0 below 0, 1 above 1, C2 at both ends"""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s ** 2)


def smoothstep_slope(s):
    inside = (s > 0.0) & (s < 1.0)
    return np.where(inside, 30 * s ** 2 * (1 - s) ** 2, 0.0)


class CutoffHamiltonian(BaseModel):
    """
    G = chi(d) * g(x * y) on pairs, where d is the distance to the degeneration simplex.

    chi vanishes for d <= r2 and equals 1 for d >= r1. The isotopy itself is generated by the
    torus-invariant companion chi(d) Im(conj(c_s) q_s) / S_s built from the rotation of g, see
    DegenerationService.transport_hamiltonian.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    g: SymbolFunction
    r1: float
    r2: float

    @model_validator(mode="after")
    def check_radii(self) -> "CutoffHamiltonian":
        if not self.r1 > self.r2 > 0:
            raise ValueError(f"radii must satisfy r1 > r2 > 0, got r1={self.r1}, r2={self.r2}")
        return self

    def profile(self, distance: float) -> float:
        return float(smoothstep((distance - self.r2) / (self.r1 - self.r2)))

    def slope(self, distance: float) -> float:
        """d chi / d distance"""
        return float(smoothstep_slope((distance - self.r2) / (self.r1 - self.r2))) / (self.r1 - self.r2)

    def value_at(self, x: np.ndarray, y: np.ndarray, distance: float) -> float:
        weight = self.profile(distance)
        if weight == 0.0:
            return 0.0
        return weight * self.g.value(x * y)
