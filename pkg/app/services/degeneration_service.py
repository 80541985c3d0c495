from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from app.models.degeneration import CutoffHamiltonian
from app.models.errors import DomainMismatch, EnteredCollar, SingularFiberPoint, StepCollapse
from app.models.fibration import BaseMorseFunction, HeightMode, TorusFiber
from app.models.geometry import AmbientPoint, BaseSetKind, Domain, FiberClass, FlagPoint, ProjectivePoint
from app.models.reports import DegeneracyReport, IsotopyPointResidual, IsotopyReport
from app.models.symbols import SymbolFunction
from app.services.dynamics_service import dynamics_service
from app.services.fibration_service import fibration_service
from app.services.geometry_service import canonical_coords, coords_of, geometry_service, horizontal
from app.services.pseudotoric_service import BASE_SET_LINES, line_normal, pseudotoric_service
from config.settings import settings

logger = structlog.get_logger()

# unit normals of the image lines of F_1 and F_0
NORMAL_FROM = np.ones(3) / np.sqrt(3)
NORMAL_TO = np.array([0.0, 1.0, 1.0]) / np.sqrt(2)

MARKED_POINTS_F0 = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, -1.0]) / np.sqrt(2))

DEFORMED_TOL = 1e-5
INTEGRAL_TOL = 1e-6
LINE_TOL = 1e-6
PAIRING_TOL = 1e-6

_FD_STEP = 1e-5
_CLEARANCE_SAMPLES = 33
_RANDOM_PAIRS = 2

# coordinate supports of the pieces of B union Sing, as (x indices, y indices)
_SIMPLEX_BRANCHES = [
    ([i, j], [k]) if line.kind == BaseSetKind.XXY else ([i], [j, k])
    for line in BASE_SET_LINES for i, j, k in [line.indices]
] + [([i], [i]) for i in range(3)]

# homogeneous tangent vector (dx, dy) at a representative pair
Velocity = Tuple[np.ndarray, np.ndarray]


def pack(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.concatenate([x.real, x.imag, y.real, y.imag])


def unpack(state: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    return state[:3] + 1j * state[3:6], state[6:9] + 1j * state[9:12]


class DegenerationService:
    """The family F_t, the toric structure on F_0 and the transport from F_1 to F_0"""

    def __init__(self):
        self.geometry = geometry_service
        self.dynamics = dynamics_service
        self.pseudotoric = pseudotoric_service
        self.fibration = fibration_service

    def ft_residual(self, x, y, t: float) -> float:
        return self.geometry.flag_residual(x, y, t)

    def psi0_classify(self, w, tol: float = 1e-9) -> FiberClass:
        w = canonical_coords(coords_of(w))
        if self.pseudotoric.image_residual(w, 0.0) >= tol:
            raise DomainMismatch(f"{w} is not on the line w1 + w2 = 0")
        return self.pseudotoric.classify_fiber_point(ProjectivePoint(coords=w))

    def toric_h0(self) -> BaseMorseFunction:
        a, b = MARKED_POINTS_F0
        return self.fibration.make_height(a, b, HeightMode.SYMBOL, t=0.0)

    def family_seeds(
        self,
        c1: float,
        c2: float,
        ts: Sequence[float],
        anchor: np.ndarray,
        rng: Optional[np.random.Generator] = None,
    ) -> List[FlagPoint]:
        """Seed points with labels (c1, c2) over the projection of anchor onto each line of the family"""
        seeds, guess = [], None
        for t in ts:
            normal = line_normal(t)
            w = anchor - normal * (np.vdot(normal, anchor) / np.vdot(normal, normal).real)
            w = canonical_coords(w)
            moduli = self.fibration.solve_fiber(w, c1, c2, guess=guess, rng=rng)
            guess = moduli
            x, y = self.fibration.fiber_point(w, moduli)
            seeds.append(FlagPoint(x=self.geometry.normalize(x), y=self.geometry.normalize(y), t=t))
        return seeds

    def restriction_residual(self, p: FlagPoint, time: float = 1.0) -> float:
        """Largest F_0 residual after the ambient flows of both integrals"""
        worst = 0.0
        for f in (self.pseudotoric.integrals.f1, self.pseudotoric.integrals.f2):
            moved = self.dynamics.ambient_flow(f, p.x.coords, p.y.coords, time)
            worst = max(worst, self.ft_residual(moved.x, moved.y, p.t))
        return worst

    def base_rank(self, matrices: Sequence[np.ndarray], w: np.ndarray) -> int:
        """Real rank of the Hamiltonian fields of w-plane symbols at w"""
        w = canonical_coords(w)
        fields = [horizontal(w, -2j * matrix @ w) for matrix in matrices]
        real = np.column_stack([np.concatenate([f.real, f.imag]) for f in fields])
        sigma = np.linalg.svd(real, compute_uv=False)
        return int(np.sum(sigma > settings.rank_tol))

    def diagonal_moment_check(
        self,
        h1: SymbolFunction,
        h2: SymbolFunction,
        rng: np.random.Generator,
        samples: int = 10_000,
        exclusion: float = 1e-2,
    ) -> DegeneracyReport:
        for f in (h1, h2):
            eigenvalues = np.real(np.diag(f.matrix_x))
            if not f.is_diagonal or len(np.unique(np.round(eigenvalues, 12))) < 3:
                raise DomainMismatch(f"{f.name} must be diagonal with distinct eigenvalues")
        matrices = (h1.matrix_x, h2.matrix_x)

        degenerate = false_positives = missed = 0
        max_line_distance = 0.0
        for k in range(samples):
            w = rng.normal(size=3) + 1j * rng.normal(size=3)
            on_line = k % 2 == 1
            if on_line:
                w[rng.integers(3)] = 0.0
            w = canonical_coords(w)
            line_distance = float(np.min(np.abs(w)))
            if self.base_rank(matrices, w) < 2:
                degenerate += 1
                max_line_distance = max(max_line_distance, line_distance)
                if line_distance > exclusion:
                    false_positives += 1
            elif on_line:
                missed += 1

        reference = {
            "[1:1:1]": np.ones(3, dtype=complex),
            "[0:1:2]": np.array([0, 1, 2], dtype=complex),
            "[1:0:0]": np.array([1, 0, 0], dtype=complex),
        }
        report = DegeneracyReport(
            sampled=samples,
            degenerate=degenerate,
            false_positives=false_positives,
            missed=missed,
            max_line_distance=max_line_distance,
            components=self.pullback_components(rng),
            ranks={label: self.base_rank(matrices, w) for label, w in reference.items()},
        )
        logger.info(
            "degeneracy_census", sampled=samples, degenerate=degenerate,
            false_positives=false_positives, missed=missed,
        )
        return report

    def pullback_components(self, rng: np.random.Generator, samples: int = 60, tol: float = 1e-12) -> List[str]:
        """Vanishing patterns of pairs whose product lies on a coordinate line w_i = 0"""
        labels = set()
        for _ in range(samples):
            i = int(rng.integers(3))
            x = rng.normal(size=3) + 1j * rng.normal(size=3)
            y = rng.normal(size=3) + 1j * rng.normal(size=3)
            if rng.random() < 0.5:
                x[i] = 0.0
            else:
                y[i] = 0.0
            x, y = canonical_coords(x), canonical_coords(y)
            if abs(canonical_coords(x * y)[i]) >= tol:
                continue
            labels.update(f"x{m}" for m in range(3) if abs(x[m]) < tol)
            labels.update(f"y{m}" for m in range(3) if abs(y[m]) < tol)
        return sorted(labels)

    def make_g(
        self, normal_from: np.ndarray = NORMAL_FROM, normal_to: np.ndarray = NORMAL_TO
    ) -> Tuple[SymbolFunction, float]:
        """
        Symbol on the w-plane whose flow rotates the line {normal_from . w = 0} onto {normal_to . w = 0}.

        The flow of g is expm(K t) with K the real rotation generator of the plane of the two normals;
        it reaches the target line at the rotation angle.
        """
        e1 = np.asarray(normal_from, dtype=float) / np.linalg.norm(normal_from)
        target = np.asarray(normal_to, dtype=float) / np.linalg.norm(normal_to)
        cosine = float(np.clip(e1 @ target, -1.0, 1.0))
        e2 = target - cosine * e1
        e2 = e2 / np.linalg.norm(e2)
        rotation = np.outer(e2, e1) - np.outer(e1, e2)
        g = SymbolFunction(matrix_x=0.5j * rotation, defined_on=Domain.BASE_CP2W, name="g")
        return g, float(np.arccos(cosine))

    def base_flow(self, g: SymbolFunction, w: np.ndarray, time: float) -> np.ndarray:
        return canonical_coords(expm(-2j * g.matrix_x * time) @ coords_of(w))

    def cutoff_G(self, g: SymbolFunction, r1: Optional[float] = None, r2: Optional[float] = None) -> CutoffHamiltonian:
        return CutoffHamiltonian(g=g, r1=r1 or settings.r1, r2=r2 or settings.r2)

    def clearance(self, x: np.ndarray, y: np.ndarray) -> float:
        return self.pseudotoric.distance_to_simplex(x, y)

    def G_value(self, G: CutoffHamiltonian, x: np.ndarray, y: np.ndarray) -> float:
        return G.value_at(x, y, self.clearance(x, y))

    def pencil(self, G: CutoffHamiltonian, s: float) -> Tuple[np.ndarray, np.ndarray]:
        """Normal n_s of the moving line at time s and its velocity dn_s/ds"""
        rotation = (-2j * G.g.matrix_x).real
        normal = expm(rotation * s) @ NORMAL_FROM
        return normal, rotation @ normal

    def clearance_gradient(self, x: np.ndarray, y: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
        """Distance to the degeneration simplex and the gradient of its nearest branch"""
        x, y = x / np.linalg.norm(x), y / np.linalg.norm(y)
        distance, mask_x, mask_y = min(
            (float(np.sqrt(np.sum(np.abs(x[mx]) ** 2) + np.sum(np.abs(y[my]) ** 2))), mx, my)
            for mx, my in _SIMPLEX_BRANCHES
        )
        gx, gy = np.zeros(3, dtype=complex), np.zeros(3, dtype=complex)
        if distance > 0:
            gx[mask_x] = x[mask_x] / (2 * distance)
            gy[mask_y] = y[mask_y] / (2 * distance)
        return distance, horizontal(x, gx), horizontal(y, gy)

    def transport_hamiltonian(
        self, G: CutoffHamiltonian, s: float, x: np.ndarray, y: np.ndarray
    ) -> Tuple[float, np.ndarray, np.ndarray]:
        """
        Value and gradient of the time-dependent generator of the isotopy.

        H_s = chi(d) Im(conj(c) q) / S with q = n_s . (x * y), c = -n_s' . (x * y) and
        S = sum n_s^2 (|x|^2 + |y|^2) - 2 |q|^2 at unit representatives.

        H_s only sees |x_i|, |y_i| and the phase-free product conj(c) q, so it Poisson-commutes with
        every balanced diagonal integral. On {q = 0} its field moves q at the rate c, which cancels
        the turning of n_s and keeps the point on the moving hypersurface n_s . (x * y) = 0.
        Gradients follow dH(v) = 2 Re(g^H v) and are horizontal.
        """
        x, y = x / np.linalg.norm(x), y / np.linalg.norm(y)
        zero = np.zeros(3, dtype=complex)
        distance, dx_distance, dy_distance = self.clearance_gradient(x, y)
        weight = G.profile(distance)
        if weight == 0.0:
            return 0.0, zero, zero
        normal, rate = self.pencil(G, s)
        w = x * y
        q = normal @ w
        c = -(rate @ w)
        squares = normal ** 2
        size = float(squares @ (np.abs(x) ** 2 + np.abs(y) ** 2) - 2 * abs(q) ** 2)
        if size < settings.zero_tol:
            raise SingularFiberPoint("moving hypersurface is singular here")
        energy = float(np.imag(np.conj(c) * q))
        slope = G.slope(distance)

        gradients = []
        for z, other, distance_gradient in ((x, y, dx_distance), (y, x, dy_distance)):
            dq, dc = normal * other, -rate * other
            energy_gradient = 0.5j * (c * dq.conj() - q * dc.conj())
            size_gradient = squares * z - 2 * q * dq.conj()
            gradient = weight * (energy_gradient * size - energy * size_gradient) / size ** 2
            gradient = gradient + (energy / size) * slope * distance_gradient
            gradients.append(horizontal(z, gradient))
        return weight * energy / size, gradients[0], gradients[1]

    def transport_field(self, G: CutoffHamiltonian, s: float, x: np.ndarray, y: np.ndarray) -> Velocity:
        """Hamiltonian field -2i |z|^2 grad of the isotopy generator at time s, at any representatives"""
        _, gx, gy = self.transport_hamiltonian(G, s, x, y)
        return -2j * np.linalg.norm(x) * gx, -2j * np.linalg.norm(y) * gy

    def torus_cloud(self, torus: TorusFiber, stride: int = 1) -> Tuple[List[FlagPoint], List[List[Velocity]]]:
        """Torus samples with their three frame fields as velocities at the canonical representatives"""
        cloud, frames = [], []
        flat = [
            (point, frame_pair)
            for grid, grid_frames in zip(torus.samples, torus.frames)
            for row, row_frames in zip(grid, grid_frames)
            for point, frame_pair in zip(row, row_frames)
        ]
        for point, (frame, fields) in flat[::stride]:
            i, j = frame.chart_id
            scale_x, scale_y = point.x.coords[i], point.y.coords[j]
            velocities = []
            for row in fields:
                dx, dy = frame.to_homogeneous(row)
                velocities.append((scale_x * dx, scale_y * dy))
            cloud.append(point)
            frames.append(velocities)
        return cloud, frames

    def path_clearance(self, g: SymbolFunction, T: float, cloud: Sequence[FlagPoint]) -> float:
        """Smallest distance to the degeneration simplex along the trajectories of a cloud"""
        G = self.cutoff_G(g, 2e-3, 1e-3)
        return min(self._integrate_copies(G, T, [(p.x.coords, p.y.coords)])[1] for p in cloud)

    def default_radii(self, clearance: float) -> Tuple[float, float]:
        """Cut-off radii that keep the collar clear of every trajectory"""
        return clearance / 2, clearance / 4

    def random_tangent(self, x: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> Velocity:
        dx = rng.normal(size=3) + 1j * rng.normal(size=3)
        dy = rng.normal(size=3) + 1j * rng.normal(size=3)
        return horizontal(x, dx), horizontal(y, dy)

    def isotopy_transport(
        self,
        G: CutoffHamiltonian,
        T: float,
        cloud: Sequence[FlagPoint],
        frames: Optional[Sequence[Sequence[Velocity]]] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tuple[List[AmbientPoint], IsotopyReport]:
        """
        Transport flags of F_1 along the Hamiltonian isotopy and check where they land.

        Each point carries its frame velocities plus random horizontal tangent pairs; omega on every
        pair of pushed-forward vectors is compared with its value before the flow, unnormalized.
        """
        frames = frames or [[] for _ in cloud]
        rng = rng or np.random.default_rng(settings.seed)
        integrals = self.pseudotoric.integrals
        transported, residuals = [], []
        for p, velocities in zip(cloud, frames):
            x0, y0 = p.x.coords, p.y.coords
            vectors = list(velocities) + [
                self.random_tangent(x0, y0, rng) for _ in range(2 * _RANDOM_PAIRS)
            ]
            copies = [(x0, y0)]
            for dx, dy in vectors:
                copies += [(x0 + _FD_STEP * dx, y0 + _FD_STEP * dy), (x0 - _FD_STEP * dx, y0 - _FD_STEP * dy)]
            ends, clearance = self._integrate_copies(G, T, copies)

            x1, y1 = ends[0]
            moved = [
                ((ends[1 + 2 * a][0] - ends[2 + 2 * a][0]) / (2 * _FD_STEP),
                 (ends[1 + 2 * a][1] - ends[2 + 2 * a][1]) / (2 * _FD_STEP))
                for a in range(len(vectors))
            ]
            drift = 0.0
            for a in range(len(vectors)):
                for b in range(a + 1, len(vectors)):
                    before = self.geometry.ambient_omega(x0, y0, vectors[a], vectors[b])
                    after = self.geometry.ambient_omega(x1, y1, moved[a], moved[b])
                    drift = max(drift, abs(after - before))

            start_values = np.array(integrals.values(x0, y0))
            end_values = np.array(integrals.values(x1, y1))
            residuals.append(IsotopyPointResidual(
                deformed_residual=self.ft_residual(x1, y1, 0.0),
                integral_drift=float(np.max(np.abs(end_values - start_values))),
                line_residual=self.pseudotoric.image_residual(x1 * y1, 0.0),
                min_clearance=clearance,
                pairing_drift=drift,
            ))
            transported.append(self.geometry.make_ambient(x1, y1))

        report = IsotopyReport(
            time=T,
            r1=G.r1,
            r2=G.r2,
            points=residuals,
            max_deformed_residual=max((r.deformed_residual for r in residuals), default=0.0),
            max_integral_drift=max((r.integral_drift for r in residuals), default=0.0),
            max_line_residual=max((r.line_residual for r in residuals), default=0.0),
            max_pairing_drift=max((r.pairing_drift for r in residuals), default=0.0),
            min_clearance=min((r.min_clearance for r in residuals), default=float("inf")),
            passed=all(
                r.deformed_residual < DEFORMED_TOL and r.integral_drift < INTEGRAL_TOL
                and r.line_residual < LINE_TOL and r.pairing_drift < PAIRING_TOL
                for r in residuals
            ),
        )
        logger.info(
            "isotopy_transported", points=len(residuals), time=T, r1=G.r1, r2=G.r2,
            passed=report.passed, min_clearance=report.min_clearance,
        )
        return transported, report

    def _integrate_copies(
        self, G: CutoffHamiltonian, T: float, copies: List[Velocity]
    ) -> Tuple[List[Velocity], float]:
        """One solve for a point and its displaced copies, so all share the adaptive steps"""
        clearance = self.clearance(*copies[0])
        if clearance < G.r2:
            raise EnteredCollar(f"trajectory starts inside the collar (distance {clearance:.3e})")
        if T == 0:
            return copies, clearance

        def rhs(s, state):
            rates = []
            for k in range(len(copies)):
                dx, dy = self.transport_field(G, s, *unpack(state[12 * k:12 * (k + 1)]))
                rates.append(pack(dx, dy))
            return np.concatenate(rates)

        state0 = np.concatenate([pack(x, y) for x, y in copies])
        solution = solve_ivp(
            rhs, (0.0, T), state0, method="DOP853", rtol=1e-11, atol=1e-13,
            t_eval=np.linspace(0.0, T, _CLEARANCE_SAMPLES),
        )
        if solution.status < 0:
            logger.warning("isotopy_step_collapse", message=solution.message)
            raise StepCollapse(solution.message)
        for column in solution.y.T:
            distance = self.clearance(*unpack(column[:12]))
            if distance < G.r2:
                logger.warning("isotopy_entered_collar", distance=distance, r2=G.r2)
                raise EnteredCollar(f"trajectory came within {distance:.3e} of the degeneration simplex")
            clearance = min(clearance, distance)
        final = solution.y[:, -1]
        return [unpack(final[12 * k:12 * (k + 1)]) for k in range(len(copies))], clearance


# Global service instance
degeneration_service = DegenerationService()
