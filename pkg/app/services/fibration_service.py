from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.linalg import expm
from scipy.optimize import brentq, minimize_scalar, root
from scipy.spatial import ConvexHull

from app.models.errors import (
    DegeneratePair,
    DomainMismatch,
    LevelOutOfRange,
    NoConvergence,
    NoSolution,
    SingularFiberPoint,
)
from app.models.fibration import (
    BaseMorseFunction,
    HeightMode,
    LevelLoop,
    PulledBackFunction,
    TorusFiber,
    TorusType,
)
from app.models.geometry import FiberTag, FlagPoint, ProjectivePoint
from app.models.reports import HexagonVertex, MomentImage
from app.models.symbols import SymbolFunction
from app.services.dynamics_service import dynamics_service
from app.services.geometry_service import COMPLEX_STRUCTURE, canonical_coords, coords_of, geometry_service
from app.services.pseudotoric_service import (
    base_field,
    line_direction,
    line_normal,
    pseudotoric_service,
)
from config.settings import settings

logger = structlog.get_logger()

# log-moduli beyond this are boundary hits, not fiber points
_S_MAX = 12.0
_CRITICAL_TOL = 1e-9
# first-return search: coarse scan window and accepted landing distance
_RETURN_WINDOW = 0.1
_RETURN_TOL = 1e-6
_TRANSPORT_TIME = 200.0
_MAX_TRANSPORT_STEP = 0.2
_TANGENT_STEP = 1e-4


class FibrationService:
    """Base height functions, level loops and the torus fibers of the minimal fibration"""

    def __init__(self):
        self.geometry = geometry_service
        self.dynamics = dynamics_service
        self.pseudotoric = pseudotoric_service

    @property
    def integrals(self):
        return self.pseudotoric.integrals

    def make_height(
        self,
        a: np.ndarray,
        b: Optional[np.ndarray] = None,
        mode: HeightMode = HeightMode.MOBIUS,
        t: float = 1.0,
    ) -> BaseMorseFunction:
        normal = line_normal(t)
        a = canonical_coords(coords_of(a))
        for point in (a,) if b is None else (a, coords_of(b)):
            if self.pseudotoric.image_residual(point, t) > 1e-9:
                raise DomainMismatch(f"{point} is not on the image line")
        covector_max = line_direction(a, normal)

        if mode == HeightMode.SYMBOL:
            if b is not None and abs(np.vdot(a, canonical_coords(coords_of(b)))) > 1e-12:
                logger.warning("height_symbol_ignores_b", a=a.tolist(), b=np.asarray(b).tolist())
            b = canonical_coords(covector_max)
            covector_min = a
        else:
            if b is None:
                raise DegeneratePair("Mobius mode needs both critical points")
            b = canonical_coords(coords_of(b))
            if self.geometry.projective_distance(a, b) < 1e-9:
                raise DegeneratePair("maximum and minimum coincide")
            covector_min = line_direction(b, normal)

        numerator = np.outer(covector_min, covector_min.conj()) - np.outer(covector_max, covector_max.conj())
        denominator = np.outer(covector_min, covector_min.conj()) + np.outer(covector_max, covector_max.conj())
        return BaseMorseFunction(
            mode=mode,
            max_point=ProjectivePoint(coords=a),
            min_point=ProjectivePoint(coords=b),
            numerator=numerator,
            denominator=denominator,
            normal=normal,
            covector_max=covector_max,
            covector_min=covector_min,
        )

    def default_height(self, config=settings) -> BaseMorseFunction:
        return self.make_height(
            np.asarray(config.height_max, dtype=complex),
            np.asarray(config.height_min, dtype=complex),
            HeightMode(config.height_mode),
        )

    def base_symbol(self, matrix: np.ndarray, t: float = 1.0) -> BaseMorseFunction:
        """An arbitrary Hermitian symbol restricted to the image line"""
        return BaseMorseFunction(
            mode=HeightMode.SYMBOL,
            numerator=np.asarray(matrix, dtype=complex),
            denominator=np.eye(3, dtype=complex),
            normal=line_normal(t),
        )

    def level_point(self, h: BaseMorseFunction, zeta: complex) -> np.ndarray:
        """Point of the line with Mobius coordinate zeta"""
        functional = h.covector_min - np.conj(zeta) * h.covector_max
        return canonical_coords(np.cross(functional, h.normal).conj())

    def trace_loop(self, h: BaseMorseFunction, level: float, n: Optional[int] = None) -> LevelLoop:
        n = n or settings.loop_samples
        if not -1.0 < level < 1.0:
            raise LevelOutOfRange(f"level {level} is outside the open range (-1, 1)")
        radius = np.sqrt((1.0 + level) / (1.0 - level))

        if h.mode == HeightMode.SYMBOL:
            start = self.level_point(h, radius)
            generator = -2j * h.numerator
            period = np.pi / 2
            points = [canonical_coords(expm(generator * period * k / n) @ start) for k in range(n)]
            closing = canonical_coords(expm(generator * period) @ start)
            closed = self.geometry.projective_distance(closing, start) < 1e-8
        else:
            angles = 2 * np.pi * np.arange(n) / n
            points = [self.level_point(h, radius * np.exp(1j * angle)) for angle in angles]
            closed = True

        residual = max(abs(h.value(w) - level) for w in points)
        return LevelLoop(
            h_level=level,
            samples=[ProjectivePoint(coords=w) for w in points],
            closed=closed,
            max_residual=residual,
        )

    def fiber_point(
        self, w: np.ndarray, log_moduli: np.ndarray, component: str = "y"
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Point of the fiber over w with x = (1, e^s0, e^s1) up to the component choice"""
        zeros = [i for i in range(3) if abs(w[i]) < 1e-12]
        x = np.zeros(3, dtype=complex)
        y = np.zeros(3, dtype=complex)
        if not zeros:
            x[:] = [1.0, np.exp(log_moduli[0]), np.exp(log_moduli[1])]
            return x, w / x
        if len(zeros) > 1:
            raise SingularFiberPoint("fiber over a vertex of the w-triangle has no torus chart")
        i = zeros[0]
        m1, m2 = [m for m in range(3) if m != i]
        x[m1], x[m2] = 1.0, np.exp(log_moduli[0])
        y[m1], y[m2] = w[m1] / x[m1], w[m2] / x[m2]
        if component == "y":
            x[i] = np.exp(log_moduli[1])
        else:
            y[i] = np.exp(log_moduli[1])
        return x, y

    def _integral_residual(self, w: np.ndarray, c: Tuple[float, float], component: str):
        def residual(s):
            x, y = self.fiber_point(w, s, component)
            f1, f2 = self.integrals.values(x, y)
            return [f1 - c[0], f2 - c[1]]

        return residual

    def solve_fiber(
        self,
        w: np.ndarray,
        c1: float,
        c2: float,
        guess: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
        multistarts: Optional[int] = None,
        component: str = "y",
    ) -> np.ndarray:
        """Log-moduli of the torus orbit over w with integral values (c1, c2)"""
        rng = rng or np.random.default_rng(settings.seed)
        multistarts = multistarts or settings.multistarts
        equations = self._integral_residual(w, (c1, c2), component)
        starts = [np.zeros(2)] if guess is None else [np.asarray(guess, dtype=float)]
        starts += [rng.normal(scale=2.0, size=2) for _ in range(multistarts)]
        for start in starts:
            solution = root(equations, start, method="hybr", options={"xtol": 1e-14})
            if not np.all(np.isfinite(solution.x)) or np.max(np.abs(solution.x)) > _S_MAX:
                continue
            if np.max(np.abs(equations(solution.x))) < settings.seed_tol:
                return solution.x

        attained = self.attained_range(w, rng, component)
        logger.info("seed_point_failed", c1=c1, c2=c2, attained=attained)
        raise NoSolution(f"({c1}, {c2}) is not attained on the fiber", attained=attained)

    def attained_range(self, w: np.ndarray, rng: np.random.Generator, component: str = "y"):
        values = np.array([
            self.integrals.values(*self.fiber_point(w, rng.uniform(-_S_MAX / 2, _S_MAX / 2, 2), component))
            for _ in range(256)
        ])
        return [values.min(axis=0).tolist(), values.max(axis=0).tolist()]

    def seed_point(
        self,
        p: ProjectivePoint,
        c1: float,
        c2: float,
        rng: Optional[np.random.Generator] = None,
        t: float = 1.0,
        guess: Optional[np.ndarray] = None,
    ) -> FlagPoint:
        fiber_class = self.pseudotoric.classify_fiber_point(p)
        if fiber_class.tag == FiberTag.TWO_ZERO:
            raise NoSolution("no torus orbits over a vertex of the w-triangle")
        moduli = self.solve_fiber(p.coords, c1, c2, guess=guess, rng=rng)
        x, y = self.fiber_point(p.coords, moduli)
        return FlagPoint(x=self.geometry.normalize(x), y=self.geometry.normalize(y), t=t)

    def frame_at(self, p: FlagPoint, h: BaseMorseFunction):
        """Chart frame plus X_f1, X_f2 and the lift of X_h as rows"""
        frame = self.geometry.chart_frame(p)
        w = canonical_coords(frame.x_rep * frame.y_rep)
        fields = np.vstack([
            self.dynamics.field_components(self.integrals.f1, frame),
            self.dynamics.field_components(self.integrals.f2, frame),
            self.pseudotoric.lift_components(frame, base_field(h, w, h.normal)),
        ])
        return frame, fields

    def singular_segments(self, samples: int = 33):
        """Integral images of the diagonal lines x_i = y_i = 0, keyed by i"""
        segments = {}
        for i in range(3):
            m1, m2 = [m for m in range(3) if m != i]
            values = []
            for s in np.linspace(0.0, 1.0, samples):
                x = np.zeros(3, dtype=complex)
                y = np.zeros(3, dtype=complex)
                x[m1], x[m2] = np.sqrt(s), np.sqrt(1 - s)
                y[m1], y[m2] = -x[m2], x[m1]
                values.append(self.integrals.values(x, y))
            segments[i] = np.array(values)
        return segments

    def collapsed_families(self, h: BaseMorseFunction):
        """Singular base points that are not critical for h, with their level and diagonal segment"""
        segments = self.singular_segments()
        families = []
        for q in self.pseudotoric.singular_base_points(line_parameter(h)):
            if self.is_critical(h, q.coords):
                continue
            index = int(np.argmin(np.abs(q.coords)))
            families.append((q, h.value(q.coords), segments[index][[0, -1]]))
        return families

    def is_critical(self, h: BaseMorseFunction, w: np.ndarray) -> bool:
        return any(
            point is not None and self.geometry.projective_distance(point, w) < _CRITICAL_TOL
            for point in (h.max_point, h.min_point)
        )

    def classify_torus(
        self, loop: LevelLoop, c1: float, c2: float, h: Optional[BaseMorseFunction] = None
    ) -> TorusType:
        h = h or self.default_height()
        for q, level, segment in self.collapsed_families(h):
            if abs(level - loop.h_level) > settings.segment_tol:
                continue
            if segment_distance(np.array([c1, c2]), segment[0], segment[1]) < settings.segment_tol:
                return TorusType.COLLAPSED
        return TorusType.SMOOTH

    def first_return(self, f: SymbolFunction, p: FlagPoint, horizon: float = 4 * np.pi, scan: int = 512) -> float:
        """Smallest positive time after which the closed-form flow of f brings p back to itself"""
        def distance(time: float) -> float:
            return self.geometry.flag_distance(self.dynamics.exact_flow(f, p, time), p)

        times = horizon * np.arange(1, scan + 1) / scan
        gaps = [distance(time) for time in times]
        for j in range(1, scan - 1):
            if not (gaps[j] <= gaps[j - 1] and gaps[j] <= gaps[j + 1] and gaps[j] < _RETURN_WINDOW):
                continue
            best = minimize_scalar(
                lambda time: distance(time) ** 2, bounds=(times[j - 1], times[j + 1]),
                method="bounded", options={"xatol": 1e-12},
            )
            if distance(best.x) < _RETURN_TOL:
                return float(best.x)
        raise NoConvergence(f"{f.name} does not return within time {horizon}")

    def loop_angle(self, h: BaseMorseFunction, p: FlagPoint, origin: FlagPoint) -> float:
        """Turn of the Mobius coordinate of psi(p) relative to psi(origin)"""
        zeta = h.mobius_coordinate(self.pseudotoric.psi(p).coords)
        return float(np.angle(zeta / h.mobius_coordinate(self.pseudotoric.psi(origin).coords)))

    def transport_loop(
        self,
        seed: FlagPoint,
        h: BaseMorseFunction,
        targets: Sequence[Tuple[int, np.ndarray]],
        max_time: float = _TRANSPORT_TIME,
    ) -> Tuple[dict, FlagPoint]:
        """
        Flow the seed along X_{h o psi} once around its level loop.

        Returns the flow's landing points over every target base point, keyed by loop index, and the
        point where the flow closes the loop.
        """
        pulled = PulledBackFunction(base=h)
        zeta0 = h.mobius_coordinate(self.pseudotoric.psi(seed).coords)
        offsets = {k: float(np.angle(h.mobius_coordinate(w) / zeta0)) for k, w in targets}

        current, travelled, elapsed, step = seed, 0.0, 0.0, 0.1
        sign, pending, arrivals = 0.0, None, {}
        while True:
            if elapsed > max_time:
                raise NoConvergence(f"flow did not close the loop within time {max_time}")
            following = self.dynamics.flow(pulled, current, step).end
            delta = self.loop_angle(h, following, current)
            if abs(delta) > 0.5:
                step /= 2
                continue
            if pending is None:
                sign = np.sign(delta)
                ordered = sorted((np.mod(sign * offset, 2 * np.pi), k) for k, offset in offsets.items())
                arrivals.update({k: seed for angle, k in ordered if angle == 0.0})
                pending = [(angle, k) for angle, k in ordered if angle > 0.0] + [(2 * np.pi, None)]
            advance = sign * delta
            while pending and travelled + advance >= pending[0][0]:
                target, k = pending.pop(0)

                def gap(time, base=current, remaining=target - travelled):
                    moved = self.dynamics.flow(pulled, base, time).end
                    return sign * self.loop_angle(h, moved, base) - remaining

                crossing = brentq(gap, 0.0, step, xtol=1e-13)
                point = self.dynamics.flow(pulled, current, crossing).end
                if k is None:
                    return arrivals, point
                arrivals[k] = point
            travelled += advance
            current = following
            elapsed += step
            if abs(delta) < 0.1:
                step = min(2 * step, _MAX_TRANSPORT_STEP)

    def loop_tangent(self, p: FlagPoint, h: BaseMorseFunction, step: float = _TANGENT_STEP):
        """Chart frame at p and the central-difference velocity of the X_{h o psi} transport there"""
        pulled = PulledBackFunction(base=h)
        frame = self.geometry.chart_frame(p)
        ends = [
            self.geometry.chart_coordinates(frame, end.x, end.y)
            for end in (self.dynamics.flow(pulled, p, s).end for s in (step, -step))
        ]
        delta = (ends[0] - ends[1]) / (2 * step)
        return frame, np.concatenate([delta.real, delta.imag])

    def angular_grid(self, base: FlagPoint, h: BaseMorseFunction, res: int, periods: Tuple[float, float]):
        """Samples and frames on the torus orbit of base, generated by the X_f1 and X_f2 flows"""
        f1, f2 = self.integrals.f1, self.integrals.f2
        frame, tangent = self.loop_tangent(base, h)
        grid, grid_frames = [], []
        for m in range(res):
            row, row_frames = [], []
            first, moved = self.dynamics.exact_pushforward(f1, frame, tangent, periods[0] * m / res)
            for n in range(res):
                target, carried = self.dynamics.exact_pushforward(f2, first, moved, periods[1] * n / res)
                point = FlagPoint(
                    x=self.geometry.normalize(target.x_rep), y=self.geometry.normalize(target.y_rep), t=base.t
                )
                fields = np.vstack([
                    self.dynamics.field_components(f1, target),
                    self.dynamics.field_components(f2, target),
                    carried[0],
                ])
                row.append(point)
                row_frames.append((target, fields))
            grid.append(row)
            grid_frames.append(row_frames)
        return grid, grid_frames

    def sample_torus(
        self,
        loop: LevelLoop,
        c1: float,
        c2: float,
        res: Optional[int] = None,
        h: Optional[BaseMorseFunction] = None,
        loop_stride: int = 1,
        rng: Optional[np.random.Generator] = None,
    ) -> TorusFiber:
        """
        Torus fiber over a level loop, built from commuting flows.

        A seed over the most generic loop sample is found by the root solver and carried around the
        loop by X_{h o psi}; the angular grid at each visited loop point comes from the X_f1 and X_f2
        flows with first-return periods. Collapsed tori are seeded by the root solver at every loop
        point outside the exclusion radius instead, and carry no holonomy.
        """
        res = res or settings.angle_samples
        h = h or self.default_height()
        rng = rng or np.random.default_rng(settings.seed)
        fiber_type = self.classify_torus(loop, c1, c2, h)
        collapse_points = [q.coords for q, level, _ in self.collapsed_families(h)
                           if abs(level - loop.h_level) <= settings.segment_tol]
        t = line_parameter(h)

        indices, excluded = [], []
        for k in range(0, len(loop.samples), loop_stride):
            near_collapse = any(
                self.geometry.projective_distance(loop.samples[k], q) < settings.collapse_radius
                for q in collapse_points
            )
            (excluded if fiber_type == TorusType.COLLAPSED and near_collapse else indices).append(k)

        seed_index = int(np.argmax([np.min(np.abs(w.coords)) for w in loop.samples]))
        seed = self.seed_point(loop.samples[seed_index], c1, c2, rng=rng, t=t)
        periods = (self.first_return(self.integrals.f1, seed), self.first_return(self.integrals.f2, seed))

        holonomy = None
        if fiber_type == TorusType.COLLAPSED:
            bases, guess = {}, None
            for k in indices:
                moduli = self.solve_fiber(loop.samples[k].coords, c1, c2, guess=guess, rng=rng)
                guess = moduli
                x, y = self.fiber_point(loop.samples[k].coords, moduli)
                bases[k] = FlagPoint(x=self.geometry.normalize(x), y=self.geometry.normalize(y), t=t)
            cross_check = None
        else:
            targets = [(k, loop.samples[k].coords) for k in indices]
            bases, closing = self.transport_loop(seed, h, targets)
            holonomy = float(np.max(np.abs(torus_moduli(closing) - torus_moduli(seed))))
            cross_check = self.solver_gap(bases, loop, c1, c2, rng)

        samples, frames = [], []
        for k in indices:
            grid, grid_frames = self.angular_grid(bases[k], h, res, periods)
            samples.append(grid)
            frames.append(grid_frames)

        torus = TorusFiber(
            loop=loop, c1=c1, c2=c2, samples=samples, frames=frames, fiber_type=fiber_type,
            angles=2 * np.pi * np.arange(res) / res, loop_indices=indices, excluded_indices=excluded,
            periods=periods, seed_index=seed_index, holonomy=holonomy, cross_check=cross_check,
        )
        logger.info(
            "torus_sampled", level=loop.h_level, c1=c1, c2=c2, loop_points=len(indices),
            res=res, fiber_type=fiber_type.value, holonomy=holonomy, cross_check=cross_check,
        )
        return torus

    def solver_gap(
        self, bases: dict, loop: LevelLoop, c1: float, c2: float, rng: np.random.Generator
    ) -> float:
        """Largest moduli gap between transported orbits and root-solved orbits over generic loop points"""
        worst = 0.0
        for k, p in bases.items():
            w = loop.samples[k]
            if self.pseudotoric.classify_fiber_point(w).tag != FiberTag.GENERIC:
                continue
            x = p.x.coords
            moduli = self.solve_fiber(w.coords, c1, c2, guess=np.log(np.abs(x[1:] / x[0])), rng=rng)
            solved_x, solved_y = self.fiber_point(w.coords, moduli)
            solved = FlagPoint(x=self.geometry.normalize(solved_x), y=self.geometry.normalize(solved_y), t=p.t)
            worst = max(worst, float(np.max(np.abs(torus_moduli(solved) - torus_moduli(p)))))
        return worst

    def sample_residual(self, torus: TorusFiber) -> float:
        """Largest deviation of the samples from the requested integrals and base loop"""
        worst = 0.0
        for k, grid in zip(torus.loop_indices, torus.samples):
            w = torus.loop.samples[k]
            for row in grid:
                for point in row:
                    f1, f2 = self.integrals.values(point.x.coords, point.y.coords)
                    base_gap = self.geometry.projective_distance(self.pseudotoric.psi(point), w)
                    worst = max(worst, abs(f1 - torus.c1), abs(f2 - torus.c2), base_gap)
        return worst

    def lagrangian_residual(self, torus: TorusFiber) -> float:
        """Largest omega pairing among the two orbit directions and the sampled loop direction"""
        worst = 0.0
        for grid in torus.frames:
            for row in grid:
                for frame, fields in row:
                    worst = max(worst, frame_isotropy(frame.omega, fields))
        return worst

    def hexagon_vertices(self) -> List[HexagonVertex]:
        vertices = []
        for i in range(3):
            for k in range(3):
                if i == k:
                    continue
                x = np.eye(3, dtype=complex)[i]
                y = np.eye(3, dtype=complex)[k]
                vertices.append(HexagonVertex(
                    label=f"x=e{i},y=e{k}", x_index=i, y_index=k, value=self.integrals.values(x, y)
                ))
        return vertices

    def moment_image(self, samples: Sequence[FlagPoint]) -> MomentImage:
        if not samples:
            raise ValueError("moment image needs at least one sample")
        values = [self.integrals.values(p.x.coords, p.y.coords) for p in samples]
        vertices = self.hexagon_vertices()
        points = np.array(values + [v.value for v in vertices])
        hull = ConvexHull(points)
        segments = [
            (tuple(seg[0]), tuple(seg[-1])) for seg in self.singular_segments().values()
        ]
        return MomentImage(
            values=[tuple(v) for v in values],
            hull=[tuple(points[i]) for i in hull.vertices],
            vertices=vertices,
            segments=segments,
        )

    def hull_excess(self, moment: MomentImage, points: np.ndarray) -> np.ndarray:
        """Signed distance of points outside the polygon (negative inside)"""
        hull = ConvexHull(np.array(moment.hull))
        normals, offsets = hull.equations[:, :2], hull.equations[:, 2]
        return np.max(np.asarray(points) @ normals.T + offsets, axis=1)

    def divisor_components(
        self, h: BaseMorseFunction, rng: np.random.Generator, samples: int = 64, tol: float = 1e-9
    ) -> List[str]:
        """Irreducible pieces of the fibers over the critical points, by vanishing pattern"""
        labels = set()
        for point in (h.max_point, h.min_point):
            w = point.coords
            zeros = [i for i in range(3) if abs(w[i]) < 1e-12]
            for _ in range(samples):
                component = rng.choice(["x", "y"]) if zeros else "y"
                x, y = self.fiber_point(w, rng.normal(size=2), component)
                x, y = canonical_coords(x), canonical_coords(y)
                pattern = [f"x{i}" for i in range(3) if abs(x[i]) < tol] + \
                    [f"y{i}" for i in range(3) if abs(y[i]) < tol]
                labels.add(",".join(pattern) if pattern else f"fiber[{np.round(w, 6).tolist()}]")
        return sorted(labels)

def segment_distance(point: np.ndarray, start: np.ndarray, end: np.ndarray) -> float:
    span = end - start
    weight = np.clip(np.dot(point - start, span) / np.dot(span, span), 0.0, 1.0)
    return float(np.linalg.norm(point - (start + weight * span)))


def frame_isotropy(omega: np.ndarray, fields: np.ndarray) -> float:
    """Largest |omega(e_i, e_j)| over frame vectors of unit length in the Kaehler metric omega(., J .)"""
    lengths = np.sqrt(np.einsum("ij,jk,ik->i", fields, omega @ COMPLEX_STRUCTURE, fields))
    units = fields / lengths[:, None]
    pairings = units @ omega @ units.T
    return float(np.max(np.abs(pairings)))


def line_parameter(h: BaseMorseFunction) -> float:
    """Deformation parameter t of the line h lives on, read off its normal (t, 1, 1)"""
    return float(np.real(h.normal[0]))


def torus_moduli(p: FlagPoint) -> np.ndarray:
    return np.concatenate([np.abs(p.x.coords), np.abs(p.y.coords)])


# Global service instance
fibration_service = FibrationService()
