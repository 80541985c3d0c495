from typing import Optional, Tuple, Union

import numpy as np
import structlog

from app.models.errors import DegenerateChart, DomainMismatch, NoConvergence, ZeroVector
from app.models.geometry import (
    AmbientPoint,
    ChartFrame,
    FlagPoint,
    ProjectivePoint,
    TangentVector,
    hypersurface_weights,
)
from config.settings import settings

logger = structlog.get_logger()

PointLike = Union[ProjectivePoint, np.ndarray]

# entries below this modulus are skipped when fixing the phase of a canonical vector
_PHASE_FLOOR = 1e-9
_NEWTON_STEPS = 50

COMPLEX_STRUCTURE = np.block([[np.zeros((3, 3)), -np.eye(3)], [np.eye(3), np.zeros((3, 3))]])


def coords_of(point: PointLike) -> np.ndarray:
    if isinstance(point, ProjectivePoint):
        return point.coords
    return np.asarray(point, dtype=complex)


def canonical_coords(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=complex)
    norm = np.linalg.norm(raw)
    if norm < settings.zero_tol:
        raise ZeroVector(f"cannot normalize a vector of norm {norm:.3e}")
    unit = raw / norm
    for entry in unit:
        if abs(entry) > _PHASE_FLOOR:
            unit = unit * (abs(entry) / entry)
            break
    return unit


def horizontal(z: np.ndarray, dz: np.ndarray) -> np.ndarray:
    """Component of dz orthogonal to the line through z"""
    return dz - z * (np.vdot(z, dz) / np.vdot(z, z))


def fubini_study_pairing(z: np.ndarray, dz1: np.ndarray, dz2: np.ndarray) -> float:
    """omega_FS(dz1, dz2) at any representative z, normalized as (i/2) dd-bar log |z|^2"""
    return float(np.imag(np.vdot(horizontal(z, dz1), horizontal(z, dz2))) / np.vdot(z, z).real)


def fubini_study_metric(z: np.ndarray) -> np.ndarray:
    norm2 = np.vdot(z, z).real
    return (np.eye(len(z)) - np.outer(z, z.conj()) / norm2) / norm2


def hermitian_to_real_form(hermitian: np.ndarray) -> np.ndarray:
    """Real antisymmetric matrix of Im(u^H H v) in (Re, Im) components"""
    hermitian = (hermitian + hermitian.conj().T) / 2
    a, b = hermitian.real, hermitian.imag
    return np.block([[b, a], [-a, b]])


class GeometryService:
    """Projective primitives, hypersurface charts and the product Fubini-Study form"""

    def __init__(self):
        self.flag_tol = settings.flag_tol

    def normalize(self, raw: np.ndarray) -> ProjectivePoint:
        return ProjectivePoint(coords=canonical_coords(raw))

    def flag_residual(self, x: PointLike, y: PointLike, t: float = 1.0) -> float:
        x, y = coords_of(x), coords_of(y)
        q = np.sum(hypersurface_weights(t) * x * y)
        return float(abs(q) / (np.linalg.norm(x) * np.linalg.norm(y)))

    def make_flag(self, x: PointLike, y: PointLike, t: float = 1.0) -> FlagPoint:
        """Wrap a point already on the hypersurface, rejecting anything off it"""
        x_c, y_c = canonical_coords(coords_of(x)), canonical_coords(coords_of(y))
        residual = self.flag_residual(x_c, y_c, t)
        if residual >= self.flag_tol:
            raise DomainMismatch(f"point is off the hypersurface (residual {residual:.3e})")
        return FlagPoint(x=ProjectivePoint(coords=x_c), y=ProjectivePoint(coords=y_c), t=t)

    def make_ambient(self, x: PointLike, y: PointLike) -> AmbientPoint:
        return AmbientPoint(x=self.normalize(coords_of(x)), y=self.normalize(coords_of(y)))

    def project_to_flag(self, x: PointLike, y: PointLike, t: float = 1.0) -> FlagPoint:
        """Minimal-norm Newton correction onto the hypersurface"""
        a = hypersurface_weights(t)
        x_c = coords_of(x) / np.linalg.norm(coords_of(x))
        y_c = coords_of(y) / np.linalg.norm(coords_of(y))
        target = self.flag_tol * 1e-3
        for _ in range(_NEWTON_STEPS):
            q = np.sum(a * x_c * y_c)
            if abs(q) < target:
                return FlagPoint(
                    x=self.normalize(x_c), y=self.normalize(y_c), t=t
                )
            gradient = np.concatenate([a * y_c, a * x_c])
            step = -q * gradient.conj() / np.vdot(gradient, gradient).real
            x_c = x_c + step[:3]
            y_c = y_c + step[3:]
            x_c = x_c / np.linalg.norm(x_c)
            y_c = y_c / np.linalg.norm(y_c)

        residual = self.flag_residual(x_c, y_c, t)
        logger.warning("project_to_flag_failed", residual=residual, t=t)
        raise NoConvergence(f"projection did not converge (residual {residual:.3e})")

    def chart_frame(
        self,
        p: FlagPoint,
        chart_id: Optional[Tuple[int, int]] = None,
        eliminated: Optional[int] = None,
    ) -> ChartFrame:
        """Dominant chart at p unless a chart and eliminated coordinate are forced"""
        a = p.weights
        x, y = p.x.coords, p.y.coords
        if chart_id is None:
            chart_id = (int(np.argmax(np.abs(x))), int(np.argmax(np.abs(y))))
        i, j = chart_id
        if abs(x[i]) < 1e-12 or abs(y[j]) < 1e-12:
            raise DegenerateChart(f"chart ({i}, {j}) does not contain the point")
        x_rep, y_rep = x / x[i], y / y[j]

        candidates = [m for m in range(3) if m != j]
        k = eliminated if eliminated is not None else max(candidates, key=lambda m: abs(a[m] * x_rep[m]))
        if k == j:
            raise DegenerateChart("the chart coordinate y_j cannot be eliminated")
        pivot = a[k] * x_rep[k]
        if abs(pivot) < 1e-10:
            raise DegenerateChart(f"no y-coordinate can be eliminated in chart ({i}, {j})")

        x_free = [m for m in range(3) if m != i]
        f = next(m for m in range(3) if m not in (j, k))

        jacobian = np.zeros((6, 3), dtype=complex)
        for col, c in enumerate(x_free):
            jacobian[c, col] = 1.0
            if c == k:
                jacobian[3 + k, col] = -y_rep[k] / x_rep[k]
            else:
                jacobian[3 + k, col] = -a[c] * y_rep[c] / pivot
        jacobian[3 + f, 2] = 1.0
        jacobian[3 + k, 2] = -a[f] * x_rep[f] / pivot

        hermitian = (
            jacobian[:3].conj().T @ fubini_study_metric(x_rep) @ jacobian[:3]
            + jacobian[3:].conj().T @ fubini_study_metric(y_rep) @ jacobian[3:]
        )
        return ChartFrame(
            chart_id=(i, j),
            eliminated=k,
            t=p.t,
            coordinates=np.array([x_rep[x_free[0]], x_rep[x_free[1]], y_rep[f]]),
            x_rep=x_rep,
            y_rep=y_rep,
            jacobian=jacobian,
            omega=hermitian_to_real_form(hermitian),
        )

    def parametrize(self, frame: ChartFrame, zeta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Chart representatives (x, y) of the chart point with local coordinates zeta"""
        a = hypersurface_weights(frame.t)
        i, j = frame.chart_id
        k, f = frame.eliminated, frame.y_free
        x = np.zeros(3, dtype=complex)
        y = np.zeros(3, dtype=complex)
        x[i] = 1.0
        x[list(frame.x_free)] = zeta[:2]
        y[j] = 1.0
        y[f] = zeta[2]
        rest = sum(a[m] * x[m] * y[m] for m in range(3) if m != k)
        y[k] = -rest / (a[k] * x[k])
        return x, y

    def chart_coordinates(self, frame: ChartFrame, x: PointLike, y: PointLike) -> np.ndarray:
        x, y = coords_of(x), coords_of(y)
        i, j = frame.chart_id
        a, b = frame.x_free
        return np.array([x[a] / x[i], x[b] / x[i], y[frame.y_free] / y[j]])

    def from_homogeneous(
        self,
        frame: ChartFrame,
        dx: np.ndarray,
        dy: np.ndarray,
        x: Optional[np.ndarray] = None,
        y: Optional[np.ndarray] = None,
    ) -> np.ndarray:
        """Real chart components of a homogeneous velocity given at representatives (x, y)"""
        x = frame.x_rep if x is None else x
        y = frame.y_rep if y is None else y
        i, j = frame.chart_id
        a, b = frame.x_free
        f = frame.y_free
        dzeta = np.array([
            (dx[a] * x[i] - x[a] * dx[i]) / x[i] ** 2,
            (dx[b] * x[i] - x[b] * dx[i]) / x[i] ** 2,
            (dy[f] * y[j] - y[f] * dy[j]) / y[j] ** 2,
        ])
        return np.concatenate([dzeta.real, dzeta.imag])

    def tangent(self, frame: ChartFrame, components: np.ndarray) -> TangentVector:
        return TangentVector(components=np.asarray(components, dtype=float), frame=frame)

    def transfer(self, v: TangentVector, target: ChartFrame) -> TangentVector:
        """Express a chart tangent vector in another chart at the same point"""
        dx, dy = v.frame.to_homogeneous(v.components)
        components = self.from_homogeneous(target, dx, dy, v.frame.x_rep, v.frame.y_rep)
        return self.tangent(target, components)

    def omega(self, frame: ChartFrame, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.asarray(u) @ frame.omega @ np.asarray(v))

    def ambient_omega(
        self, x: np.ndarray, y: np.ndarray, first: Tuple[np.ndarray, np.ndarray], second: Tuple[np.ndarray, np.ndarray]
    ) -> float:
        """Product Fubini-Study form on homogeneous velocities"""
        return fubini_study_pairing(x, first[0], second[0]) + fubini_study_pairing(y, first[1], second[1])

    def kahler_potential(self, frame: ChartFrame, zeta: np.ndarray) -> float:
        x, y = self.parametrize(frame, zeta)
        return float(np.log(np.vdot(x, x).real) + np.log(np.vdot(y, y).real))

    def chart_distance(self, p: FlagPoint, q: FlagPoint) -> float:
        frame = self.chart_frame(p)
        delta = self.chart_coordinates(frame, q.x, q.y) - frame.coordinates
        return float(np.linalg.norm(delta))

    def projective_distance(self, a: PointLike, b: PointLike) -> float:
        """Chordal distance sqrt(1 - |<a, b>|^2), taken as the norm of the horizontal part of b"""
        a, b = coords_of(a), coords_of(b)
        a = a / np.linalg.norm(a)
        b = b / np.linalg.norm(b)
        return float(min(1.0, np.linalg.norm(horizontal(a, b))))

    def flag_distance(self, p: FlagPoint, q: FlagPoint) -> float:
        return float(np.hypot(
            self.projective_distance(p.x, q.x), self.projective_distance(p.y, q.y)
        ))

    def random_flag(self, rng: np.random.Generator, t: float = 1.0) -> FlagPoint:
        a = hypersurface_weights(t)
        x = rng.normal(size=3) + 1j * rng.normal(size=3)
        raw = rng.normal(size=3) + 1j * rng.normal(size=3)
        normal = (a * x).conj()
        y = raw - normal * (np.sum(a * x * raw) / np.vdot(normal, normal).real)
        return self.project_to_flag(x, y, t)

    def random_ambient(self, rng: np.random.Generator) -> AmbientPoint:
        x = rng.normal(size=3) + 1j * rng.normal(size=3)
        y = rng.normal(size=3) + 1j * rng.normal(size=3)
        return self.make_ambient(x, y)


# Global service instance
geometry_service = GeometryService()
