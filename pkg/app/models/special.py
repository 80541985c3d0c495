from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict

from app.models.geometry import ProjectivePoint


class BoundaryDivisor(BaseModel):
    """
    Compactified fibers over two points of the image line.

    Each point q contributes a linear form c . w with c . w = 0 on the line only at q; with
    w_i = x_i y_i the product of the two forms is a section of bidegree (2, 2).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    critical_w_points: List[ProjectivePoint]
    factors: List[np.ndarray]

    def section(self, x: np.ndarray, y: np.ndarray) -> complex:
        w = x * y
        value = 1.0 + 0j
        for factor in self.factors:
            value *= np.sum(factor * w)
        return complex(value)
