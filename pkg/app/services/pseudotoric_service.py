from typing import List, Optional, Tuple

import numpy as np
import structlog

from app.models.errors import OnBaseSet, SingularFiberPoint
from app.models.fibration import PulledBackFunction
from app.models.geometry import (
    BaseSetKind,
    BaseSetLine,
    ChartFrame,
    FiberClass,
    FiberTag,
    FlagPoint,
    HorizontalLift,
    ProjectivePoint,
    TangentVector,
    hypersurface_weights,
)
from app.models.symbols import IntegralPair
from app.services.dynamics_service import HomogeneousField, dynamics_service, raw_flag
from app.services.geometry_service import canonical_coords, coords_of, geometry_service
from config.settings import settings

logger = structlog.get_logger()

# coordinates below this modulus count as zero when classifying base points
ZERO_COORD = 1e-9

BASE_SET_LINES = [
    BaseSetLine(kind=BaseSetKind.XXY, indices=(i, j, k))
    for k in range(3) for i, j in [tuple(m for m in range(3) if m != k)]
] + [
    BaseSetLine(kind=BaseSetKind.XYY, indices=(i, j, k))
    for i in range(3) for j, k in [tuple(m for m in range(3) if m != i)]
]


def line_normal(t: float = 1.0) -> np.ndarray:
    """Normal n of the image line {n^H w = 0} of the hypersurface with parameter t"""
    return hypersurface_weights(t).conj()


def line_direction(w: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Unit tangent direction of the line at the unit point w"""
    direction = np.cross(w, normal).conj()
    return direction / np.linalg.norm(direction)


def base_field(h, w: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Hamiltonian field of h on the line at the unit point w, components (Re c, Im c)"""
    direction = line_direction(w, normal)
    pairing = np.vdot(h.gradient(w), direction)
    dh_n = 2 * pairing.real
    dh_in = -2 * pairing.imag
    return np.array([dh_in, -dh_n])


def base_pairing(u: np.ndarray, v: np.ndarray) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


class PseudotoricService:
    """The map w = x * y, its base set, fiber classes and the symplectic connection"""

    def __init__(self, integrals: Optional[IntegralPair] = None):
        self.geometry = geometry_service
        self.dynamics = dynamics_service
        self.integrals = integrals or dynamics_service.integrals_from_settings()

    def psi(self, p: FlagPoint, tol: float = 1e-12) -> ProjectivePoint:
        w = p.x.coords * p.y.coords
        if np.linalg.norm(w) < tol:
            raise OnBaseSet(f"all products vanish at {p!r}")
        return self.geometry.normalize(w)

    def image_residual(self, w: np.ndarray, t: float = 1.0) -> float:
        w = coords_of(w)
        return float(abs(np.vdot(line_normal(t), w)) / np.linalg.norm(w))

    def in_base_set(self, p: FlagPoint, tol: Optional[float] = None) -> Optional[BaseSetLine]:
        tol = tol or settings.segment_tol
        for line in BASE_SET_LINES:
            if np.max(np.abs(line.defining_coordinates(p.x.coords, p.y.coords))) < tol:
                return line
        return None

    def distance_to_base_set(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(min(
            np.linalg.norm(line.defining_coordinates(x, y)) for line in BASE_SET_LINES
        ))

    def distance_to_sing(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(min(np.hypot(abs(x[i]), abs(y[i])) for i in range(3)))

    def distance_to_simplex(self, x: np.ndarray, y: np.ndarray) -> float:
        """Distance to B union Sing from canonical coordinates"""
        x, y = canonical_coords(x), canonical_coords(y)
        return min(self.distance_to_base_set(x, y), self.distance_to_sing(x, y))

    def classify_fiber_point(self, w: ProjectivePoint, tol: float = ZERO_COORD) -> FiberClass:
        zeros = [i for i in range(3) if abs(w.coords[i]) < tol]
        if not zeros:
            return FiberClass(tag=FiberTag.GENERIC)
        if len(zeros) == 1:
            return FiberClass(tag=FiberTag.ONE_ZERO, index=zeros[0])
        nonzero = [i for i in range(3) if i not in zeros]
        return FiberClass(tag=FiberTag.TWO_ZERO, index=nonzero[0] if nonzero else None)

    def singular_base_points(self, t: float = 1.0) -> List[ProjectivePoint]:
        """Intersections of the image line with the coordinate lines w_i = 0"""
        normal = line_normal(t)
        points = []
        for i in range(3):
            basis = np.zeros(3)
            basis[i] = 1.0
            candidate = np.cross(normal.conj(), basis)
            if np.linalg.norm(candidate) < 1e-12:
                continue
            point = self.geometry.normalize(candidate)
            if all(self.geometry.projective_distance(point, q) > 1e-9 for q in points):
                points.append(point)
        return points

    def psi_differential(self, frame: ChartFrame) -> Tuple[np.ndarray, np.ndarray]:
        """Real 2x6 matrix of d psi in chart components, and the canonical image point"""
        x, y = frame.x_rep, frame.y_rep
        w_raw = x * y
        w = canonical_coords(w_raw)
        scale = np.vdot(w_raw, w) / np.vdot(w_raw, w_raw).real
        direction = line_direction(w, line_normal(frame.t))
        matrix = np.zeros((2, 6))
        for col in range(6):
            basis = np.zeros(6)
            basis[col] = 1.0
            dx, dy = frame.to_homogeneous(basis)
            c = scale * np.vdot(direction, dx * y + x * dy)
            matrix[:, col] = [c.real, c.imag]
        return matrix, w

    def d_psi(self, p: FlagPoint, v: TangentVector) -> TangentVector:
        frame = v.frame or self.geometry.chart_frame(p)
        matrix, w = self.psi_differential(frame)
        return TangentVector(components=matrix @ v.components, base_point=ProjectivePoint(coords=w))

    def base_tangent(self, w: np.ndarray, components: np.ndarray) -> TangentVector:
        return TangentVector(components=np.asarray(components, dtype=float), base_point=ProjectivePoint(coords=w))

    def fiber_kernel(self, frame: ChartFrame) -> Tuple[np.ndarray, np.ndarray]:
        matrix, _ = self.psi_differential(frame)
        _, sigma, vt = np.linalg.svd(matrix)
        if sigma[1] < settings.rank_tol:
            raise SingularFiberPoint(f"d psi has rank below 2 (sigma = {sigma[1]:.3e})")
        return matrix, vt[2:].T

    def lift_components(
        self,
        frame: ChartFrame,
        u: np.ndarray,
        kernel_mixing: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        matrix, kernel = self.fiber_kernel(frame)
        if kernel_mixing is not None:
            kernel = kernel @ kernel_mixing
        system = np.vstack([matrix, kernel.T @ frame.omega])
        rhs = np.concatenate([u, np.zeros(kernel.shape[1])])
        if np.linalg.cond(system) > 1.0 / settings.rank_tol ** 2:
            raise SingularFiberPoint("fiber tangent space is not symplectic")
        return np.linalg.solve(system, rhs)

    def horizontal_lift(
        self,
        p: FlagPoint,
        u: TangentVector,
        kernel_mixing: Optional[np.ndarray] = None,
    ) -> HorizontalLift:
        frame = self.geometry.chart_frame(p)
        if self.simplex_rank(p, frame) < 2:
            raise SingularFiberPoint(f"integrals are dependent at {p!r}")
        lifted = self.lift_components(frame, u.components, kernel_mixing)
        return HorizontalLift(base_vector=u, lifted=TangentVector(components=lifted, frame=frame))

    def compatibility_check(self, p: FlagPoint, h) -> Tuple[float, float]:
        """Scaling tau and collinearity residual between the lift of X_h and X_{h o psi}"""
        frame = self.geometry.chart_frame(p)
        w = canonical_coords(frame.x_rep * frame.y_rep)
        base_vector = base_field(h, w, line_normal(p.t))
        lifted = self.lift_components(frame, base_vector)
        pulled = self.dynamics.field_components(PulledBackFunction(base=h), frame)
        tau = float(lifted @ pulled / (pulled @ pulled))
        residual = float(np.linalg.norm(lifted - tau * pulled) / np.linalg.norm(lifted))
        return tau, residual

    def lift_field(self, h, t: float = 1.0) -> HomogeneousField:
        """Horizontal lift of the base field X_h as a velocity at any representative"""

        def field(x: np.ndarray, y: np.ndarray):
            frame = self.geometry.chart_frame(raw_flag(x, y, t))
            w = canonical_coords(frame.x_rep * frame.y_rep)
            lifted = self.lift_components(frame, base_field(h, w, line_normal(t)))
            dx, dy = frame.to_homogeneous(lifted)
            i, j = frame.chart_id
            return x[i] * dx, y[j] * dy

        return field

    def simplex_rank(self, p: FlagPoint, frame: Optional[ChartFrame] = None) -> int:
        frame = frame or self.geometry.chart_frame(p)
        fields = np.column_stack([
            self.dynamics.field_components(self.integrals.f1, frame),
            self.dynamics.field_components(self.integrals.f2, frame),
        ])
        sigma = np.linalg.svd(fields, compute_uv=False)
        return int(np.sum(sigma > settings.rank_tol))


# Global service instance
pseudotoric_service = PseudotoricService()
