from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.linalg import expm

from app.models.errors import DegenerateDistribution
from app.models.flagconn import (
    FlagAsPair,
    FlagClass,
    FlagClassification,
    HorizontalSectionSample,
    SchubertMembership,
)
from app.models.geometry import BaseSetKind, FlagPoint, ProjectivePoint, TangentVector
from app.models.symbols import SymbolFunction
from app.services.dynamics_service import dynamics_service, operator_hamiltonian
from app.services.fibration_service import fibration_service
from app.services.geometry_service import COMPLEX_STRUCTURE, canonical_coords, coords_of, geometry_service, horizontal
from app.services.pseudotoric_service import BASE_SET_LINES, pseudotoric_service
from config.settings import settings

logger = structlog.get_logger()

# flow generators (A, B): x -> expm(A s) x, y -> expm(B s) y
Generators = Tuple[np.ndarray, np.ndarray]


def complexified(f: SymbolFunction) -> Generators:
    """Generators of the flow of I X_f, the gradient direction of the complexified action"""
    gen_x, gen_y = f.generators()
    return 1j * gen_x, 1j * gen_y


def apply(generators: Generators, x: np.ndarray, y: np.ndarray, s: float):
    return expm(generators[0] * s) @ x, expm(generators[1] * s) @ y


class FlagconnService:
    """Flags as (point, line) pairs, the projection to CP2 and the connection spanned by X_F and I X_F"""

    def __init__(self):
        self.geometry = geometry_service
        self.dynamics = dynamics_service
        self.pseudotoric = pseudotoric_service
        self.fibration = fibration_service

    @property
    def integrals(self):
        return self.pseudotoric.integrals

    def from_flag_point(self, q: FlagPoint) -> FlagAsPair:
        return FlagAsPair(p=q.x, l=q.y)

    def to_flag_point(self, f: FlagAsPair) -> FlagPoint:
        return self.geometry.make_flag(f.p, f.l)

    def make_pair(self, p, l) -> FlagAsPair:
        return FlagAsPair(p=self.geometry.normalize(coords_of(p)), l=self.geometry.normalize(coords_of(l)))

    def pi_project(self, f: FlagAsPair) -> ProjectivePoint:
        return f.p

    def dpi_relation_check(self, A: np.ndarray, f: FlagAsPair) -> Tuple[float, float]:
        """
        Relative gap between the projected field of F_A and the field of f_A on CP2, with the fitted
        ratio of the two.
        """
        q = self.to_flag_point(f)
        frame = self.geometry.chart_frame(q)
        dx, _ = frame.to_homogeneous(self.dynamics.field_components(operator_hamiltonian(A), frame))
        x = frame.x_rep
        projected = horizontal(x, dx)
        expected = horizontal(x, -2j * np.asarray(A, dtype=complex) @ x)
        scale = np.linalg.norm(expected)
        if scale < settings.zero_tol:
            return float(np.linalg.norm(projected)), float("nan")
        kappa = float(np.vdot(expected, projected).real / scale ** 2)
        return float(np.linalg.norm(projected - expected) / scale), kappa

    def distribution_generators(self, replace_last: Optional[SymbolFunction] = None) -> List[Generators]:
        f1, f2 = self.integrals.f1, self.integrals.f2
        generators = [f1.generators(), f2.generators(), complexified(f1), complexified(f2)]
        if replace_last is not None:
            generators[-1] = replace_last.generators()
        return generators

    def horizontal_distribution(self, f: FlagAsPair) -> List[TangentVector]:
        frame = self.geometry.chart_frame(self.to_flag_point(f))
        fields = [
            self.dynamics.field_components(self.integrals.f1, frame),
            self.dynamics.field_components(self.integrals.f2, frame),
        ]
        fields += [COMPLEX_STRUCTURE @ v for v in fields]
        sigma = np.linalg.svd(np.column_stack(fields), compute_uv=False)
        if sigma[-1] < settings.rank_tol * max(sigma[0], 1.0):
            raise DegenerateDistribution(f"distribution has rank below 4 (sigma = {sigma[-1]:.3e})")
        return [self.geometry.tangent(frame, v) for v in fields]

    def invariance_residual(self, vectors: Sequence[TangentVector]) -> float:
        """How far I applied to the span leaves the span"""
        span = np.column_stack([v.components for v in vectors])
        basis, _ = np.linalg.qr(span)
        rotated = COMPLEX_STRUCTURE @ span
        leftover = rotated - basis @ (basis.T @ rotated)
        return float(np.linalg.norm(leftover) / np.linalg.norm(rotated))

    def frobenius_residual(
        self,
        f: FlagAsPair,
        step: float,
        replace_last: Optional[SymbolFunction] = None,
        pairs: Optional[Sequence[Tuple[int, int]]] = None,
    ) -> float:
        """Largest normalized part of the flow commutators leaving the distribution"""
        frame = self.geometry.chart_frame(self.to_flag_point(f))
        x0, y0 = frame.x_rep, frame.y_rep
        generators = self.distribution_generators(replace_last)
        span = np.column_stack([
            self.geometry.from_homogeneous(frame, gx @ x0, gy @ y0) for gx, gy in generators
        ])
        norms = np.linalg.norm(span, axis=0)
        pairs = pairs or [(a, b) for a in range(len(generators)) for b in range(a + 1, len(generators))]

        worst = 0.0
        for a, b in pairs:
            x, y = x0, y0
            for index, sign in ((a, 1.0), (b, 1.0), (a, -1.0), (b, -1.0)):
                x, y = apply(generators[index], x, y, sign * step)
            delta = self.geometry.chart_coordinates(frame, x, y) - frame.coordinates
            bracket = np.concatenate([delta.real, delta.imag]) / step ** 2
            coefficients, *_ = np.linalg.lstsq(span, bracket, rcond=None)
            vertical = np.linalg.norm(bracket - span @ coefficients)
            worst = max(worst, float(vertical / (norms[a] * norms[b])))
        logger.debug("frobenius_residual", step=step, residual=worst, control=replace_last is not None)
        return worst

    def control_symbol(self, rng: np.random.Generator) -> SymbolFunction:
        """F_B for a random Hermitian B, whose field leaves the distribution"""
        raw = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        return operator_hamiltonian((raw + raw.conj().T) / 2, name="F_B")

    def torus_orbit_sample(self, seed: FlagAsPair, s: complex, t: complex) -> FlagAsPair:
        """K = diag(s, t, 1) on the point and K^-1 on the covector, preserving incidence"""
        action = np.array([s, t, 1.0], dtype=complex)
        return FlagAsPair(
            p=self.geometry.normalize(seed.p.coords * action),
            l=self.geometry.normalize(seed.l.coords / action),
        )

    def orbit_grid(self, seed: FlagAsPair, log_moduli: Sequence[float]) -> List[FlagAsPair]:
        return [
            self.torus_orbit_sample(seed, np.exp(a), np.exp(b)) for a in log_moduli for b in log_moduli
        ]

    def horizontal_section(self, seed: FlagAsPair, log_moduli: Sequence[float]) -> HorizontalSectionSample:
        return HorizontalSectionSample(
            seed=seed, grid=self.orbit_grid(seed, log_moduli), classification=self.classify_flag(seed)
        )

    def orbit_psi_spread(self, orbit: Sequence[FlagAsPair]) -> float:
        """Largest distance between psi images along an orbit"""
        images = [self.pseudotoric.psi(self.to_flag_point(f)) for f in orbit]
        return max(self.geometry.projective_distance(images[0], w) for w in images)

    def classify_flag(self, f: FlagAsPair, tol: float = 1e-10) -> FlagClassification:
        for i in range(3):
            if abs(f.l.coords[i]) < tol:
                return FlagClassification(kind=FlagClass.THROUGH_VERTEX, vertex=i)
        return FlagClassification(kind=FlagClass.GENERIC)

    def pencil_vertex_lines(self, p) -> List[FlagAsPair]:
        """Lines through p and a vertex e_i, one per vertex not equal to p"""
        p = canonical_coords(coords_of(p))
        lines = []
        for i in range(3):
            covector = np.cross(p, np.eye(3)[i])
            if np.linalg.norm(covector) < 1e-12:
                continue
            pair = self.make_pair(p, covector)
            if all(self.geometry.projective_distance(pair.l, other.l) > 1e-9 for other in lines):
                lines.append(pair)
        return lines

    def schubert_membership(self, f: FlagAsPair, vertex: int = 0, tol: float = 1e-10) -> SchubertMembership:
        """Line through the vertex e_v (D_p0) and point on the opposite edge z_v = 0 (D_l0)"""
        through_point = abs(f.l.coords[vertex]) < tol
        on_line = abs(f.p.coords[vertex]) < tol
        if through_point and on_line:
            return SchubertMembership.BOTH
        if through_point:
            return SchubertMembership.IN_D_P0
        if on_line:
            return SchubertMembership.IN_D_L0
        return SchubertMembership.NEITHER

    def schubert_flow_residual(self, f: FlagAsPair, vertex: int = 0, time: float = 0.5) -> float:
        """Defining coordinates of D_p0 / D_l0 after the flows of both integrals"""
        membership = self.schubert_membership(f, vertex)
        worst = 0.0
        for integral in (self.integrals.f1, self.integrals.f2):
            moved = self.from_flag_point(self.dynamics.exact_flow(integral, self.to_flag_point(f), time))
            if membership in (SchubertMembership.IN_D_P0, SchubertMembership.BOTH):
                worst = max(worst, abs(moved.l.coords[vertex]))
            if membership in (SchubertMembership.IN_D_L0, SchubertMembership.BOTH):
                worst = max(worst, abs(moved.p.coords[vertex]))
        return float(worst)

    def coverage(self, points: Sequence[ProjectivePoint], bins: int = 8) -> float:
        """Share of simplex cells hit by the moment coordinates |p_i|^2 / |p|^2"""
        if not points:
            return 0.0
        moments = np.array([np.abs(p.coords[:2]) ** 2 / np.linalg.norm(p.coords) ** 2 for p in points])
        cells = {tuple(np.minimum((m * bins).astype(int), bins - 1)) for m in moments}
        inside = {(i, j) for i in range(bins) for j in range(bins) if i + j + 1 < bins}
        return len(cells & inside) / len(inside)

    def orbit_coverage(self, seed: FlagAsPair, log_moduli: Sequence[float], bins: int = 8) -> float:
        return self.coverage([self.pi_project(f) for f in self.orbit_grid(seed, log_moduli)], bins)

    def base_set_samples(self, rng: np.random.Generator, per_line: int = 8) -> List[FlagPoint]:
        samples = []
        for line in BASE_SET_LINES:
            i, j, k = line.indices
            for _ in range(per_line):
                x = rng.normal(size=3) + 1j * rng.normal(size=3)
                y = rng.normal(size=3) + 1j * rng.normal(size=3)
                if line.kind == BaseSetKind.XXY:
                    x = np.eye(3, dtype=complex)[k]
                    y[k] = 0.0
                else:
                    y = np.eye(3, dtype=complex)[i]
                    x[i] = 0.0
                samples.append(self.geometry.make_flag(x, y))
        return samples

    def sing_samples(self, rng: np.random.Generator, per_line: int = 8) -> List[FlagPoint]:
        samples = []
        for i in range(3):
            m1, m2 = [m for m in range(3) if m != i]
            for _ in range(per_line):
                a, b = rng.normal(size=2) + 1j * rng.normal(size=2)
                x = np.zeros(3, dtype=complex)
                y = np.zeros(3, dtype=complex)
                x[m1], x[m2] = a, b
                y[m1], y[m2] = -b, a
                samples.append(self.geometry.make_flag(x, y))
        return samples

    def simplex_images(self, rng: np.random.Generator, per_line: int = 8) -> Tuple[np.ndarray, np.ndarray]:
        """Hull excess of the integral images of base-set and Sing samples"""
        base = self.base_set_samples(rng, per_line)
        moment = self.fibration.moment_image(base)
        sing = self.sing_samples(rng, per_line)
        return (
            self.fibration.hull_excess(moment, np.array(moment.values)),
            self.fibration.hull_excess(moment, np.array([self.integrals.values(q.x.coords, q.y.coords) for q in sing])),
        )


# Global service instance
flagconn_service = FlagconnService()
