from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, computed_field


class CheckResult(BaseModel):
    """One verified property with the statistic that decided it"""

    name: str
    description: str
    claim: str
    statistic: Optional[float] = None
    threshold: Optional[float] = None
    passed: bool
    error: Optional[str] = None
    details: Dict[str, Any] = Field(default_factory=dict)


class VerificationReport(BaseModel):
    schema_version: int = 1
    seed: int
    height_mode: str
    checks: List[CheckResult] = Field(default_factory=list)

    @computed_field
    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failed(self) -> List[str]:
        return [check.name for check in self.checks if not check.passed]


class HexagonVertex(BaseModel):
    label: str
    x_index: int
    y_index: int
    value: Tuple[float, float]


class MomentImage(BaseModel):
    values: List[Tuple[float, float]]
    hull: List[Tuple[float, float]]
    vertices: List[HexagonVertex]
    segments: List[Tuple[Tuple[float, float], Tuple[float, float]]] = Field(default_factory=list)


class PhaseStatistics(BaseModel):
    labels: Tuple[float, float, float]
    mean: float
    std: float
    n: int
    min_modulus: float


class SpecialtyReport(BaseModel):
    schema_version: int = 1
    mode: str
    gauge_reference: str
    s: float
    per_fiber: List[PhaseStatistics]
    cross_fiber_dev: float
    phase_tol: float

    @computed_field
    @property
    def special(self) -> bool:
        return self.cross_fiber_dev < self.phase_tol and all(f.std < self.phase_tol for f in self.per_fiber)


class DegeneracyReport(BaseModel):
    """Rank census of a pair of diagonal symbols on the w-plane"""

    sampled: int
    degenerate: int
    false_positives: int
    max_line_distance: float
    components: List[str]
    missed: int = 0
    ranks: Dict[str, int] = Field(default_factory=dict)


class IsotopyPointResidual(BaseModel):
    deformed_residual: float
    integral_drift: float
    line_residual: float
    min_clearance: float
    pairing_drift: float = 0.0


class IsotopyReport(BaseModel):
    schema_version: int = 1
    time: float
    r1: float
    r2: float
    points: List[IsotopyPointResidual]
    max_deformed_residual: float
    max_integral_drift: float
    max_line_residual: float
    max_pairing_drift: float
    min_clearance: float
    passed: bool
