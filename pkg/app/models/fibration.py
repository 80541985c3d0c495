import enum
from typing import Any, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.models.geometry import ProjectivePoint


class HeightMode(str, enum.Enum):
    MOBIUS = "mobius"
    SYMBOL = "symbol"


class TorusType(str, enum.Enum):
    SMOOTH = "Smooth"
    COLLAPSED = "Collapsed"


class BaseMorseFunction(BaseModel):
    """
    h(w) = (w^H N w) / (w^H D w) on a line of the w-plane.

    Both modes are built from unit covectors l_a, l_b vanishing at the maximum a and the minimum b:
    N = l_b l_b^H - l_a l_a^H and D = l_b l_b^H + l_a l_a^H, which is the standard height in the
    Mobius coordinate l_b(w) / l_a(w). Symbol mode takes b orthogonal to a, so D is the identity on
    the line and h is a genuine symbol.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mode: HeightMode
    max_point: Optional[ProjectivePoint] = None
    min_point: Optional[ProjectivePoint] = None
    numerator: np.ndarray
    denominator: np.ndarray
    normal: np.ndarray
    covector_max: Optional[np.ndarray] = None
    covector_min: Optional[np.ndarray] = None

    def value(self, w: np.ndarray) -> float:
        return float(np.vdot(w, self.numerator @ w).real / np.vdot(w, self.denominator @ w).real)

    def gradient(self, w: np.ndarray) -> np.ndarray:
        """g with dh(dw) = 2 Re(g^H dw) at the representative w"""
        scale = np.vdot(w, self.denominator @ w).real
        return (self.numerator @ w - self.value(w) * (self.denominator @ w)) / scale

    def mobius_coordinate(self, w: np.ndarray) -> complex:
        """l_b(w) / l_a(w): zero at the minimum, infinite at the maximum"""
        return complex(np.vdot(self.covector_min, w) / np.vdot(self.covector_max, w))


class PulledBackFunction(BaseModel):
    """h composed with w_i = x_i y_i, a Hamiltonian on pairs"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    base: Any

    def value(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.base.value(x * y)

    def gradient(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        gw = self.base.gradient(x * y)
        return y.conj() * gw, x.conj() * gw


class LevelLoop(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    h_level: float
    samples: List[ProjectivePoint]
    closed: bool = True
    max_residual: float = 0.0


class TorusFiber(BaseModel):
    """
    Grid of flags on the union of the torus orbits over a level loop.

    samples[k][m][n] sits over loop point k after flowing X_f1 for angles[m] / 2pi of its period and X_f2
    for angles[n] / 2pi of its period; frames[k][m][n] holds the chart components of X_f1, X_f2 and the
    tangent of the loop transport at that sample.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    loop: LevelLoop
    c1: float
    c2: float
    samples: List[List[List[Any]]]
    frames: List[List[List[Any]]]
    fiber_type: TorusType = TorusType.SMOOTH
    angles: np.ndarray
    loop_indices: List[int]
    excluded_indices: List[int] = []
    periods: Tuple[float, float] = (np.pi, np.pi)
    seed_index: int = 0
    holonomy: Optional[float] = None
    cross_check: Optional[float] = None
