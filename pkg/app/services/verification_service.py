from typing import Callable, List, Optional

import numpy as np
import structlog

from app.models.errors import EnteredCollar, NoSolution, PseudotoricError
from app.models.fibration import BaseMorseFunction, HeightMode, TorusFiber, TorusType
from app.models.reports import CheckResult, VerificationReport
from app.services.degeneration_service import degeneration_service
from app.services.dynamics_service import symbol_from_eigenvalues
from app.services.fibration_service import fibration_service, frame_isotropy
from app.services.flagconn_service import flagconn_service
from app.services.geometry_service import COMPLEX_STRUCTURE, geometry_service
from app.services.pseudotoric_service import pseudotoric_service
from app.services.special_service import special_service
from app.utils.parallel import parallel_map
from config.settings import settings

logger = structlog.get_logger()

HEXAGON = [(0.0, 0.0), (1.0, 1.0), (1.0, 2.0), (3.0, 4.0), (3.0, 5.0), (4.0, 6.0)]
SYMBOL_MAX = np.array([0.0, 1.0, -1.0])
WRONG_DIVISOR_POINTS = (np.array([0.0, 1.0, -1.0]), np.array([1.0, -1.0, 0.0]))
# critical points away from every singular base point of the image line
OFFSET_HEIGHT_POINTS = (np.array([1.0, 2.0, -3.0]), np.array([2.0, -1.0, -1.0]))


def check(name: str, description: str, claim: str, statistic: float, threshold: float, passed: bool, **details) -> CheckResult:
    return CheckResult(
        name=name, description=description, claim=claim, statistic=float(statistic),
        threshold=threshold, passed=bool(passed), details=details,
    )


class VerificationService:
    """Runs every invariant of the structure as a named, thresholded check"""

    def __init__(self, res: int = 4, loop_stride: int = 8):
        self.geometry = geometry_service
        self.pseudotoric = pseudotoric_service
        self.fibration = fibration_service
        self.special = special_service
        self.degeneration = degeneration_service
        self.flagconn = flagconn_service
        self.res = res
        self.loop_stride = loop_stride
        self._sampled: Optional[List[TorusFiber]] = None

    def run(self, config=settings) -> VerificationReport:
        rng = np.random.default_rng(config.seed)
        self._sampled = None
        checks = [
            self.involution, self.tangency, self.tangency_control, self.image_on_line,
            self.compatibility, self.lagrangian, self.holonomy, self.singular_census, self.residue_charts,
            self.specialty, self.lie_invariance, self.anticanonical_degree, self.isotopy,
            self.toric_f0, self.connection, self.moment_geometry,
        ]
        report = VerificationReport(
            schema_version=config.schema_version, seed=config.seed, height_mode=config.height_mode
        )
        for run_check in checks:
            report.checks.append(self._guarded(run_check, rng))
        logger.info("verification_finished", passed=report.passed, failed=report.failed())
        return report

    def _guarded(self, run_check: Callable[[np.random.Generator], CheckResult], rng) -> CheckResult:
        name = run_check.__name__
        try:
            result = run_check(rng)
        except (PseudotoricError, ValueError, np.linalg.LinAlgError) as e:
            logger.error("check_errored", check=name, error=str(e))
            return CheckResult(
                name=name, description=(run_check.__doc__ or "").strip(), claim="", passed=False, error=str(e)
            )
        logger.info("check_finished", check=name, passed=result.passed, statistic=result.statistic)
        return result

    def _flags(self, rng, n: Optional[int] = None):
        return [self.geometry.random_flag(rng) for _ in range(n or settings.random_flags)]

    def _symbol_height(self) -> BaseMorseFunction:
        return self.fibration.make_height(SYMBOL_MAX, mode=HeightMode.SYMBOL)

    def _tori(self, h: BaseMorseFunction, rng, count: Optional[int] = None) -> List[TorusFiber]:
        """Tori over the configured levels and labels, skipping labels a level does not attain"""
        jobs = [(level, c) for level in settings.loop_levels for c in settings.torus_labels]
        jobs = jobs[:count] if count else jobs

        def sample(job):
            level, (c1, c2) = job
            loop = self.fibration.trace_loop(h, level)
            try:
                return self.fibration.sample_torus(
                    loop, c1, c2, res=self.res, h=h, loop_stride=self.loop_stride,
                    rng=np.random.default_rng(settings.seed),
                )
            except NoSolution as e:
                logger.warning("torus_skipped", level=level, c1=c1, c2=c2, attained=e.attained)
                return None

        return [torus for torus in parallel_map(sample, jobs) if torus is not None]

    def _default_tori(self, rng) -> List[TorusFiber]:
        if self._sampled is None:
            self._sampled = self._tori(self.fibration.default_height(), rng)
        return self._sampled

    def involution(self, rng) -> CheckResult:
        """Poisson bracket of the two integrals at random flags"""
        integrals = self.pseudotoric.integrals
        worst = max(abs(self.pseudotoric.dynamics.poisson(integrals.f1, integrals.f2, p)) for p in self._flags(rng))
        return check("involution", self.involution.__doc__, "the two integrals Poisson-commute",
                     worst, 1e-8, worst < 1e-8)

    def _fiber_speed(self, f, p) -> float:
        frame = self.geometry.chart_frame(p)
        matrix, _ = self.pseudotoric.psi_differential(frame)
        return float(np.linalg.norm(matrix @ self.pseudotoric.dynamics.field_components(f, frame)))

    def tangency(self, rng) -> CheckResult:
        """Image of the integral fields under the differential of w = x * y"""
        integrals = self.pseudotoric.integrals
        worst = max(
            self._fiber_speed(f, p) for p in self._flags(rng) for f in (integrals.f1, integrals.f2)
        )
        return check("tangency", self.tangency.__doc__, "the integral flows preserve the fibers of w = x * y",
                     worst, 1e-8, worst < 1e-8)

    def tangency_control(self, rng) -> CheckResult:
        """Share of flags where an unbalanced symbol moves the fibers"""
        unbalanced = symbol_from_eigenvalues([0, 1, 2], [2, 1, 1], name="unbalanced")
        flags = self._flags(rng)
        share = np.mean([self._fiber_speed(unbalanced, p) > 1e-3 for p in flags])
        return check("tangency_control", self.tangency_control.__doc__,
                     "without the balance condition the flow leaves the fibers", share, 0.9, share >= 0.9)

    def image_on_line(self, rng) -> CheckResult:
        """Distance of w = x * y from the image line"""
        worst = max(self.pseudotoric.image_residual(self.pseudotoric.psi(p).coords) for p in self._flags(rng))
        return check("image_on_line", self.image_on_line.__doc__, "the image of the flag variety is a line",
                     worst, 1e-10, worst < 1e-10)

    def compatibility(self, rng) -> CheckResult:
        """Lift of X_h against X_{h o psi} for three base functions"""
        raw = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        heights = [
            self.fibration.default_height(),
            self._symbol_height(),
            self.fibration.base_symbol((raw + raw.conj().T) / 2),
        ]
        worst, min_tau = 0.0, np.inf
        for p in self._flags(rng, 100):
            for h in heights:
                tau, residual = self.pseudotoric.compatibility_check(p, h)
                worst, min_tau = max(worst, residual), min(min_tau, tau)
        return check("compatibility", self.compatibility.__doc__,
                     "the horizontal lift of X_h is a positive multiple of X_{h o psi}",
                     worst, 1e-6, worst < 1e-6 and min_tau > 0, min_tau=min_tau)

    def lagrangian(self, rng) -> CheckResult:
        """Isotropy of the sampled torus frames, with a non-isotropic control plane"""
        tori = self._default_tori(rng)
        worst = max(self.fibration.lagrangian_residual(torus) for torus in tori)
        frame, fields = tori[0].frames[0][0][0]
        control_fields = np.vstack([fields[0], fields[1], COMPLEX_STRUCTURE @ fields[0]])
        control = frame_isotropy(frame.omega, control_fields)
        return check("lagrangian", self.lagrangian.__doc__, "the fibers are Lagrangian tori",
                     worst, 1e-6, worst < 1e-6 and control > 1e-2 and len(tori) >= 10,
                     tori=len(tori), control=control)

    def holonomy(self, rng) -> CheckResult:
        """Return of the loop transport to the starting orbit, cross-checked against the root solver"""
        tori = [torus for torus in self._default_tori(rng) if torus.holonomy is not None]
        worst = max(torus.holonomy for torus in tori)
        gap = max(torus.cross_check for torus in tori)
        return check("holonomy", self.holonomy.__doc__,
                     "transport once around a level loop closes up on the starting torus orbit",
                     worst, 1e-5, worst < 1e-5 and gap < 1e-6 and len(tori) >= 10,
                     solver_gap=gap, tori=len(tori))

    def singular_census(self, rng) -> CheckResult:
        """Singular base points and the smooth / smooth / collapsed torus table"""
        h = self.fibration.default_height()
        points = self.pseudotoric.singular_base_points()
        families = self.fibration.collapsed_families(h)
        _, level, _ = families[0]
        other = 0.5 * (level + (0.9 if level < 0.5 else -0.9))
        table = [
            self.fibration.classify_torus(self.fibration.trace_loop(h, other, 8), 2.0, 3.0, h),
            self.fibration.classify_torus(self.fibration.trace_loop(h, level, 8), 2.0, 3.3, h),
            self.fibration.classify_torus(self.fibration.trace_loop(h, level, 8), 2.0, 3.0, h),
        ]
        expected = [TorusType.SMOOTH, TorusType.SMOOTH, TorusType.COLLAPSED]
        control = len(self.fibration.collapsed_families(self.fibration.make_height(*OFFSET_HEIGHT_POINTS)))
        return check("singular_census", self.singular_census.__doc__,
                     "three singular base points; only the diagonal segment over the third collapses",
                     len(points), 3,
                     len(points) == 3 and len(families) == 1 and table == expected and control > len(families),
                     table=[t.value for t in table], offset_height_families=control)

    def residue_charts(self, rng) -> CheckResult:
        """Residue form on one tangent triple through two charts"""
        divisor = self.special.divisor_for(self._symbol_height())
        worst = 0.0
        for p in self._flags(rng, 50):
            worst = max(worst, self.special.chart_consistency(p, divisor, rng))
        return check("residue_charts", self.residue_charts.__doc__, "the residue form is independent of the chart",
                     worst, 1e-7, worst < 1e-7)

    def specialty(self, rng) -> CheckResult:
        """Phase of the residue form on torus frames, with a wrong-divisor control"""
        h = self._symbol_height()
        tori = self._tori(h, rng, count=10)
        report = self.special.specialty_report(tori, self.special.divisor_for(h), h.mode.value)
        wrong = self.special.specialty_report(tori, self.special.make_divisor(WRONG_DIVISOR_POINTS), h.mode.value)
        worst_std = max(f.std for f in report.per_fiber)
        control = max(wrong.cross_fiber_dev, max(f.std for f in wrong.per_fiber))
        return check("specialty", self.specialty.__doc__,
                     "the fibration is special Lagrangian for the boundary divisor",
                     max(worst_std, report.cross_fiber_dev), settings.phase_tol,
                     report.special and control > 0.1 and len(tori) >= 10,
                     s=report.s, control_deviation=control, fibers=len(tori))

    def lie_invariance(self, rng) -> CheckResult:
        """Derivative of the residue phase function along the frame flows and a control flow"""
        h = self._symbol_height()
        divisor = self.special.divisor_for(h)
        worst = 0.0
        for p in self._flags(rng, 20):
            for field in ("f1", "f2", "lift"):
                worst = max(worst, self.special.lie_invariance_check(field, p, 1e-4, h, divisor))
        control = max(
            self.special.lie_invariance_check(self.flagconn.control_symbol(rng), q, 1e-4, h, divisor)
            for q in self._flags(rng, 3)
        )
        return check("lie_invariance", self.lie_invariance.__doc__,
                     "the residue form is invariant along the integral flows and the lifted base flow",
                     worst, 1e-5, worst < 1e-5 and control > 1e-2, control=control)

    def anticanonical_degree(self, rng) -> CheckResult:
        """Scaling law of the divisor section"""
        divisor = self.special.divisor_for(self.fibration.default_height())
        worst = 0.0
        for p in self._flags(rng, 100):
            lam, mu = rng.normal(size=2) + 1j * rng.normal(size=2)
            x, y = p.x.coords, p.y.coords
            base = divisor.section(x, y)
            scaled = divisor.section(lam * x, mu * y)
            worst = max(worst, abs(scaled - lam ** 2 * mu ** 2 * base) / abs(lam ** 2 * mu ** 2 * base))
        return check("anticanonical_degree", self.anticanonical_degree.__doc__,
                     "the divisor section has bidegree (2, 2)", worst, 1e-12, worst < 1e-12)

    def isotopy(self, rng) -> CheckResult:
        """Transport of a smooth torus from F_1 to F_0 by the cut-off Hamiltonian"""
        h = self.fibration.default_height()
        level = settings.loop_levels[0]
        c1, c2 = settings.torus_labels[0]
        torus = self.fibration.sample_torus(
            self.fibration.trace_loop(h, level, 8), c1, c2, res=2, h=h, rng=np.random.default_rng(settings.seed)
        )
        cloud, frames = self.degeneration.torus_cloud(torus, stride=8)
        g, T = self.degeneration.make_g()
        clearance = self.degeneration.path_clearance(g, T, cloud)
        _, report = self.degeneration.isotopy_transport(
            self.degeneration.cutoff_G(g, *self.degeneration.default_radii(clearance)), T, cloud, frames, rng=rng
        )
        start = self.degeneration.clearance(cloud[0].x.coords, cloud[0].y.coords)
        try:
            _, control = self.degeneration.isotopy_transport(
                self.degeneration.cutoff_G(g, 2 * start, 1.5 * start), T, cloud[:1]
            )
            control_failed = not control.passed
        except EnteredCollar:
            control_failed = True
        statistic = max(report.max_integral_drift, report.max_line_residual, report.max_pairing_drift)
        return check("isotopy", self.isotopy.__doc__,
                     "a smooth torus is Hamiltonian isotopic to a torus of the toric degeneration",
                     statistic, 1e-6, report.passed and control_failed,
                     deformed=report.max_deformed_residual, clearance=clearance, points=len(cloud))

    def toric_f0(self, rng) -> CheckResult:
        """Toric structure on F_0: orthogonal critical points, Lagrangian fibers, diagonal degeneracy locus"""
        h0 = self.degeneration.toric_h0()
        orthogonality = abs(np.vdot(h0.max_point.coords, h0.min_point.coords))
        loop = self.fibration.trace_loop(h0, 0.2, 16)
        seed_w = max(loop.samples, key=lambda w: np.min(np.abs(w.coords))).coords
        c1, c2 = self.pseudotoric.integrals.values(*self.fibration.fiber_point(seed_w, np.zeros(2)))
        torus = self.fibration.sample_torus(loop, c1, c2, res=3, h=h0, loop_stride=4, rng=rng)
        residual = self.fibration.lagrangian_residual(torus)
        integrals = self.pseudotoric.integrals
        census = self.degeneration.diagonal_moment_check(
            symbol_from_eigenvalues(np.real(np.diag(integrals.f1.matrix_x)), name="H1"),
            symbol_from_eigenvalues(np.real(np.diag(integrals.f2.matrix_x)), name="H2"),
            rng, 2000,
        )
        restriction = max(
            self.degeneration.restriction_residual(self.geometry.random_flag(rng, 0.0)) for _ in range(20)
        )
        passed = (
            orthogonality == 0.0 and residual < 1e-6 and restriction < 1e-8
            and census.false_positives == 0 and census.missed == 0 and len(census.components) == 6
        )
        return check("toric_f0", self.toric_f0.__doc__, "the degenerate fiber carries a standard toric fibration",
                     residual, 1e-6, passed, restriction=restriction, ranks=census.ranks,
                     components=census.components)

    def connection(self, rng) -> CheckResult:
        """Projection relation, integrability of the connection and orbit / fiber agreement"""
        integrals = self.pseudotoric.integrals
        flags = [self.flagconn.from_flag_point(p) for p in self._flags(rng, 100)]
        dpi = max(
            self.flagconn.dpi_relation_check(f.matrix_x, flag)[0]
            for flag in flags for f in (integrals.f1, integrals.f2)
        )
        frobenius = max(self.flagconn.frobenius_residual(flag, step) for flag in flags[:20] for step in (1e-2, 1e-3))
        spread = max(
            self.flagconn.orbit_psi_spread(self.flagconn.orbit_grid(flag, np.linspace(-2, 2, 5))) for flag in flags[:20]
        )
        return check("connection", self.connection.__doc__,
                     "the connection is integrable and its leaves are torus orbits over CP2 minus the triangle",
                     max(dpi, frobenius), 1e-4, dpi < 1e-6 and frobenius < 1e-4 and spread < 1e-8,
                     dpi=dpi, frobenius=frobenius, spread=spread)

    def moment_geometry(self, rng) -> CheckResult:
        """Hexagon vertices and the images of the base set and the singular lines"""
        values = sorted(v.value for v in self.fibration.hexagon_vertices())
        vertex_gap = max(np.hypot(a[0] - b[0], a[1] - b[1]) for a, b in zip(values, HEXAGON))
        base_excess, sing_excess = self.flagconn.simplex_images(rng)
        passed = vertex_gap < 1e-9 and np.max(np.abs(base_excess)) < 1e-9 and np.max(sing_excess) < -1e-9
        return check("moment_geometry", self.moment_geometry.__doc__,
                     "base set maps to the hexagon boundary and the singular lines strictly inside",
                     vertex_gap, 1e-9, passed, base=float(np.max(np.abs(base_excess))), sing=float(np.max(sing_excess)))


# Global service instance
verification_service = VerificationService()
