import enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from app.models.geometry import ProjectivePoint


class FlagClass(str, enum.Enum):
    GENERIC = "Generic"
    THROUGH_VERTEX = "ThroughVertex"


class SchubertMembership(str, enum.Enum):
    IN_D_P0 = "InD_p0"
    IN_D_L0 = "InD_l0"
    NEITHER = "Neither"
    BOTH = "Both"


def incidence(l: np.ndarray, p: np.ndarray) -> float:
    """|<l, p>| / (|l| |p|) for the bilinear pairing sum l_i p_i"""
    return float(abs(np.sum(l * p)) / (np.linalg.norm(l) * np.linalg.norm(p)))


class FlagAsPair(BaseModel):
    """A point p of CP2 and a line through it, the line given by its covector l"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    p: ProjectivePoint
    l: ProjectivePoint

    @model_validator(mode="after")
    def check_incidence(self) -> "FlagAsPair":
        residual = incidence(self.l.coords, self.p.coords)
        if residual >= 1e-10:
            raise ValueError(f"point does not lie on the line (residual {residual:.3e})")
        return self


class FlagClassification(BaseModel):
    kind: FlagClass
    vertex: Optional[int] = None


class HorizontalSectionSample(BaseModel):
    """Flags swept out from a seed by the diagonal complex torus"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    seed: FlagAsPair
    grid: List[FlagAsPair]
    classification: FlagClassification
