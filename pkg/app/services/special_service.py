from typing import List, Optional, Sequence, Union

import numpy as np
import structlog
from scipy.stats import circmean, circstd

from app.models.errors import DegenerateChart, InsufficientSamples, OnDivisor
from app.models.fibration import BaseMorseFunction, TorusFiber
from app.models.geometry import ChartFrame, FlagPoint, ProjectivePoint, hypersurface_weights
from app.models.reports import PhaseStatistics, SpecialtyReport
from app.models.special import BoundaryDivisor
from app.models.symbols import SymbolFunction
from app.services.dynamics_service import dynamics_service
from app.services.fibration_service import fibration_service
from app.services.geometry_service import canonical_coords, coords_of, geometry_service
from app.services.pseudotoric_service import line_direction, line_normal, pseudotoric_service
from config.settings import settings

logger = structlog.get_logger()

OMEGA3 = np.exp(2j * np.pi / 3)
REFERENCE_FLAG = (np.ones(3, dtype=complex), np.array([1.0, OMEGA3, OMEGA3 ** 2]))
REFERENCE_LABEL = "x=[1:1:1], y=[1:w:w^2], canonical chart basis"


def affine_rep(z: np.ndarray) -> np.ndarray:
    """Divide by the first coordinate of maximal modulus"""
    moduli = np.abs(z)
    index = int(np.flatnonzero(moduli >= moduli.max() * (1 - 1e-9))[0])
    return z / z[index]


def wrap(angle):
    return np.angle(np.exp(1j * np.asarray(angle)))


class SpecialService:
    """Boundary divisor, the residue volume form and the phase test on torus fibers"""

    def __init__(self):
        self.geometry = geometry_service
        self.dynamics = dynamics_service
        self.pseudotoric = pseudotoric_service
        self.fibration = fibration_service
        self._gauges = {}

    def make_divisor(self, points: Sequence[Union[ProjectivePoint, np.ndarray]], t: float = 1.0) -> BoundaryDivisor:
        normal = line_normal(t)
        factors, canonical = [], []
        for point in points:
            w = canonical_coords(coords_of(point))
            zeros = [i for i in range(3) if abs(w[i]) < 1e-12]
            if zeros:
                factor = np.zeros(3, dtype=complex)
                factor[zeros[0]] = 1.0
            else:
                factor = line_direction(w, normal).conj()
            factors.append(factor)
            canonical.append(ProjectivePoint(coords=w))
        return BoundaryDivisor(critical_w_points=canonical, factors=factors)

    def divisor_for(self, h: BaseMorseFunction) -> BoundaryDivisor:
        return self.make_divisor([h.max_point, h.min_point])

    def section_D(self, p: FlagPoint, divisor: BoundaryDivisor) -> complex:
        return divisor.section(affine_rep(p.x.coords), affine_rep(p.y.coords))

    def _raw_theta(self, frame: ChartFrame, divisor: BoundaryDivisor, vectors: np.ndarray) -> complex:
        i, j = frame.chart_id
        k, f = frame.eliminated, frame.y_free
        derivative = hypersurface_weights(frame.t)[k] * frame.x_rep[k]
        if abs(derivative) < 1e-10:
            raise DegenerateChart("eliminated coordinate has a vanishing derivative")
        section = divisor.section(frame.x_rep, frame.y_rep)
        if abs(section) < 1e-12:
            raise OnDivisor("the point lies on the boundary divisor")
        sign = (-1) ** (i + j) * (1 if k < f else -1)
        columns = np.column_stack([frame.to_complex(v) for v in vectors])
        return complex(sign * np.linalg.det(columns) / (derivative * section))

    def gauge(self, divisor: BoundaryDivisor) -> complex:
        key = tuple(np.round(np.concatenate(divisor.factors), 12).tolist())
        if key not in self._gauges:
            reference = self.geometry.make_flag(*REFERENCE_FLAG)
            frame = self.geometry.chart_frame(reference)
            value = self._raw_theta(frame, divisor, np.eye(6)[:3])
            self._gauges[key] = np.conj(value) / abs(value)
        return self._gauges[key]

    def theta_D(
        self,
        p: FlagPoint,
        u: np.ndarray,
        v: np.ndarray,
        w: np.ndarray,
        divisor: BoundaryDivisor,
        frame: Optional[ChartFrame] = None,
    ) -> complex:
        """Residue form on chart tangent components u, v, w (all in the same frame)"""
        frame = frame or self.geometry.chart_frame(p)
        return self.gauge(divisor) * self._raw_theta(frame, divisor, np.vstack([u, v, w]))

    def overlapping_frames(self, p: FlagPoint, floor: float = 0.1) -> List[ChartFrame]:
        """Every chart containing p comfortably, with each admissible eliminated coordinate"""
        x, y = np.abs(p.x.coords), np.abs(p.y.coords)
        frames = []
        for i in range(3):
            for j in range(3):
                if x[i] < floor * x.max() or y[j] < floor * y.max():
                    continue
                for k in range(3):
                    if k == j:
                        continue
                    try:
                        frames.append(self.geometry.chart_frame(p, (i, j), k))
                    except DegenerateChart:
                        continue
        return frames

    def chart_consistency(self, p: FlagPoint, divisor: BoundaryDivisor, rng: np.random.Generator) -> float:
        """Relative spread of theta on one random tangent triple evaluated through every overlapping chart"""
        frames = self.overlapping_frames(p)
        source = frames[0]
        triple = [self.geometry.tangent(source, rng.normal(size=6)) for _ in range(3)]
        reference = self.theta_D(p, *(v.components for v in triple), divisor, frame=source)
        worst = 0.0
        for frame in frames[1:]:
            moved = [self.geometry.transfer(v, frame).components for v in triple]
            value = self.theta_D(p, *moved, divisor, frame=frame)
            worst = max(worst, abs(value - reference) / abs(reference))
        return float(worst)

    def pole_profile(
        self, p: FlagPoint, divisor: BoundaryDivisor, direction: np.ndarray, steps: np.ndarray
    ) -> np.ndarray:
        """|theta| * |section| along x -> x + s * direction, with y re-solved onto the flag variety"""
        values = []
        for s in steps:
            q = self.geometry.project_to_flag(p.x.coords + s * direction, p.y.coords, p.t)
            frame = self.geometry.chart_frame(q)
            value = self.frame_theta(frame, np.eye(6)[:3], divisor)
            values.append(abs(value) * abs(divisor.section(frame.x_rep, frame.y_rep)))
        return np.array(values)

    def frame_theta(self, frame: ChartFrame, fields: np.ndarray, divisor: BoundaryDivisor) -> complex:
        return self.gauge(divisor) * self._raw_theta(frame, divisor, fields)

    def fiber_phases(self, torus: TorusFiber, divisor: BoundaryDivisor) -> np.ndarray:
        values = np.array([
            self.frame_theta(frame, fields, divisor)
            for grid in torus.frames for row in grid for frame, fields in row
        ])
        return values

    def specialty_report(
        self,
        fibers: List[TorusFiber],
        divisor: BoundaryDivisor,
        mode: str,
    ) -> SpecialtyReport:
        if not fibers:
            raise InsufficientSamples("no fibers to evaluate")
        per_fiber, means = [], []
        for torus in fibers:
            values = self.fiber_phases(torus, divisor)
            if len(values) < 2:
                raise InsufficientSamples(f"fiber ({torus.c1}, {torus.c2}) has {len(values)} samples")
            phases = np.angle(values)
            mean = float(circmean(phases, high=np.pi, low=-np.pi))
            means.append(mean)
            per_fiber.append(PhaseStatistics(
                labels=(torus.loop.h_level, torus.c1, torus.c2),
                mean=mean,
                std=float(circstd(phases, high=np.pi, low=-np.pi)),
                n=len(values),
                min_modulus=float(np.min(np.abs(values))),
            ))
        global_mean = float(circmean(np.array(means), high=np.pi, low=-np.pi))
        deviation = float(np.max(np.abs(wrap(np.array(means) - global_mean))))
        report = SpecialtyReport(
            mode=mode,
            gauge_reference=REFERENCE_LABEL,
            s=float(wrap(-global_mean)),
            per_fiber=per_fiber,
            cross_fiber_dev=deviation,
            phase_tol=settings.phase_tol,
        )
        logger.info("specialty_evaluated", mode=mode, s=report.s, deviation=deviation, fibers=len(fibers))
        return report

    def frame_value(self, p: FlagPoint, h: BaseMorseFunction, divisor: BoundaryDivisor) -> complex:
        frame, fields = self.fibration.frame_at(p, h)
        return self.frame_theta(frame, fields, divisor)

    def lie_invariance_check(
        self,
        field: Union[str, SymbolFunction],
        p: FlagPoint,
        step: float,
        h: BaseMorseFunction,
        divisor: BoundaryDivisor,
    ) -> float:
        """
        Relative central-difference Lie derivative of theta on the frame (X_f1, X_f2, lift of X_h) at p.

        Symbol flows push the frame forward through their closed-form linear differential. The lifted
        base flow commutes with all three frame fields, so its pushed frame is the frame at the moved point.
        """
        frame, fields = self.fibration.frame_at(p, h)
        centre = self.frame_theta(frame, fields, divisor)
        if field == "lift":
            lift = self.pseudotoric.lift_field(h)
            forward, backward = (
                self.frame_value(self.dynamics.integrate_field(lift, p, s).end, h, divisor) for s in (step, -step)
            )
        else:
            integrals = self.pseudotoric.integrals
            if isinstance(field, str):
                if field not in ("f1", "f2"):
                    raise ValueError(f"unknown frame flow {field!r}")
                field = integrals.f1 if field == "f1" else integrals.f2
            forward, backward = (
                self.frame_theta(*self.dynamics.exact_pushforward(field, frame, fields, s), divisor)
                for s in (step, -step)
            )
        return float(abs(forward - backward) / (2 * step * abs(centre)))


# Global service instance
special_service = SpecialService()
