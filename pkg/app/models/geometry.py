import enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class Domain(str, enum.Enum):
    FLAG = "flag"
    AMBIENT = "ambient"
    BASE_CP2W = "base_cp2w"
    BASE_CP1W = "base_cp1w"


class ProjectivePoint(BaseModel):
    """Canonical homogeneous coordinates: unit norm, first nonzero entry real positive"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    coords: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.coords)

    def __repr__(self):
        return f"<ProjectivePoint({np.array2string(self.coords, precision=6)})>"


class FlagPoint(BaseModel):
    """Point of the hypersurface t*x0*y0 + x1*y1 + x2*y2 = 0; t = 1 is the flag variety"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    x: ProjectivePoint
    y: ProjectivePoint
    t: float = 1.0

    @property
    def weights(self) -> np.ndarray:
        return hypersurface_weights(self.t)

    def __repr__(self):
        return f"<FlagPoint(x={self.x.coords}, y={self.y.coords}, t={self.t})>"


# On the deformed family every flag carries its parameter; the alias keeps call sites readable
DeformedFlag = FlagPoint


class AmbientPoint(BaseModel):
    """Point of CP2 x CP2 with no hypersurface constraint"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    x: ProjectivePoint
    y: ProjectivePoint


class ChartFrame(BaseModel):
    """
    Product affine chart x_i = 1, y_j = 1 with y_k eliminated through the hypersurface equation.

    Local complex coordinates are (x_a, x_b, y_f) with a < b the x-indices other than i and f the
    remaining y-index. Real tangent components are (Re dz, Im dz) in that order.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    chart_id: Tuple[int, int]
    eliminated: int
    t: float = 1.0
    coordinates: np.ndarray
    x_rep: np.ndarray
    y_rep: np.ndarray
    jacobian: np.ndarray
    omega: np.ndarray

    @property
    def x_free(self) -> Tuple[int, int]:
        i = self.chart_id[0]
        return tuple(m for m in range(3) if m != i)

    @property
    def y_free(self) -> int:
        j = self.chart_id[1]
        return next(m for m in range(3) if m not in (j, self.eliminated))

    def to_complex(self, components: np.ndarray) -> np.ndarray:
        return components[:3] + 1j * components[3:]

    def to_homogeneous(self, components: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Homogeneous velocity (dx, dy) at the chart representatives"""
        velocity = self.jacobian @ self.to_complex(np.asarray(components, dtype=float))
        return velocity[:3], velocity[3:]


class TangentVector(BaseModel):
    """Real tangent components attached to a chart frame (flag charts) or to a base frame"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    components: np.ndarray
    frame: Optional[ChartFrame] = None
    base_point: Optional[ProjectivePoint] = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.components))


class BaseSetKind(str, enum.Enum):
    XXY = "xxy"
    XYY = "xyy"


class BaseSetLine(BaseModel):
    """
    One of the six lines of the base set.

    XXY with indices (i, j, k): x_i = x_j = y_k = 0, so x is the vertex e_k.
    XYY with indices (i, j, k): x_i = y_j = y_k = 0, so y is the covector e_i.
    """

    model_config = ConfigDict(frozen=True)

    kind: BaseSetKind
    indices: Tuple[int, int, int]

    def defining_coordinates(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        i, j, k = self.indices
        if self.kind == BaseSetKind.XXY:
            return np.array([x[i], x[j], y[k]])
        return np.array([x[i], y[j], y[k]])


class FiberTag(str, enum.Enum):
    GENERIC = "generic"
    ONE_ZERO = "one_zero"
    TWO_ZERO = "two_zero"


FIBER_DESCRIPTIONS = {
    FiberTag.GENERIC: "del Pezzo surface of degree six",
    FiberTag.ONE_ZERO: "union of two del Pezzo surfaces blown up at one point",
    FiberTag.TWO_ZERO: "two projective planes and two quadrics",
}


class FiberClass(BaseModel):
    model_config = ConfigDict(frozen=True)

    tag: FiberTag
    index: Optional[int] = None

    @property
    def description(self) -> str:
        return FIBER_DESCRIPTIONS[self.tag]

    @property
    def is_singular(self) -> bool:
        return self.tag != FiberTag.GENERIC


class HorizontalLift(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    base_vector: TangentVector
    lifted: TangentVector
    tau: Optional[float] = Field(default=None, gt=0)


def hypersurface_weights(t: float) -> np.ndarray:
    return np.array([t, 1.0, 1.0], dtype=complex)
