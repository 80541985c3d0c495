from typing import Callable, Optional, Tuple, Union

import numpy as np
import structlog
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from app.models.errors import DomainMismatch, StepCollapse, UnbalancedIntegrals
from app.models.geometry import AmbientPoint, ChartFrame, Domain, FlagPoint, ProjectivePoint, TangentVector
from app.models.symbols import FlowResult, Hamiltonian, IntegralPair, SymbolFunction
from app.services.geometry_service import COMPLEX_STRUCTURE, geometry_service
from config.settings import settings

logger = structlog.get_logger()

# homogeneous velocity (dx, dy) of a vector field at representatives (x, y)
HomogeneousField = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]

_CHUNK = 0.05


def symbol_from_eigenvalues(lambda_x, lambda_y=None, name: str = "symbol") -> SymbolFunction:
    matrix_y = None if lambda_y is None else np.diag(np.asarray(lambda_y, dtype=complex))
    return SymbolFunction(
        matrix_x=np.diag(np.asarray(lambda_x, dtype=complex)), matrix_y=matrix_y, name=name
    )


def operator_hamiltonian(operator: np.ndarray, shift: float = 0.0, name: str = "F_A") -> SymbolFunction:
    """F_A(x, y) = f_A(x) + f_{-A^T}(y) + shift, tangent to the flag variety for any Hermitian A"""
    operator = np.asarray(operator, dtype=complex)
    return SymbolFunction(
        matrix_x=operator,
        matrix_y=-operator.T + shift * np.eye(3),
        name=name,
    )


class DynamicsService:
    """Hamiltonian fields, Poisson brackets and flows on the hypersurface and the ambient product"""

    def __init__(self):
        self.geometry = geometry_service

    def eval_symbol(self, f: SymbolFunction, p: Union[FlagPoint, AmbientPoint, ProjectivePoint]) -> float:
        if isinstance(p, ProjectivePoint):
            if f.matrix_y is not None:
                raise DomainMismatch(f"{f.name} needs a pair of points")
            return f.value(p.coords)
        if f.defined_on in (Domain.BASE_CP2W, Domain.BASE_CP1W):
            raise DomainMismatch(f"{f.name} lives on the w-plane, not on pairs")
        return f.value(p.x.coords, p.y.coords)

    def make_default_integrals(self) -> IntegralPair:
        return IntegralPair(
            f1=symbol_from_eigenvalues([0, 1, 2], [2, 1, 0], name="F1"),
            f2=symbol_from_eigenvalues([0, 1, 3], [3, 2, 0], name="F2"),
            provenance="default",
        )

    def integrals_from_settings(self, config=settings) -> IntegralPair:
        pair = IntegralPair(
            f1=symbol_from_eigenvalues(config.f1_x, config.f1_y, name="F1"),
            f2=symbol_from_eigenvalues(config.f2_x, config.f2_y, name="F2"),
            provenance="config",
        )
        if not config.allow_unbalanced:
            self.require_balanced(pair)
        return pair

    def require_balanced(self, pair: IntegralPair):
        for f in (pair.f1, pair.f2):
            if not f.is_balanced():
                raise UnbalancedIntegrals(f"{f.name} sums {f.balance_sums().tolist()} are not constant")

    def differential(self, h: Hamiltonian, frame: ChartFrame) -> np.ndarray:
        """Real gradient of h in chart components"""
        gx, gy = h.gradient(frame.x_rep, frame.y_rep)
        pairing = np.concatenate([gx, gy]).conj() @ frame.jacobian
        return np.concatenate([2 * pairing.real, -2 * pairing.imag])

    def field_components(self, h: Hamiltonian, frame: ChartFrame) -> np.ndarray:
        return np.linalg.solve(frame.omega.T, self.differential(h, frame))

    def ham_field(self, h: Hamiltonian, p: FlagPoint, frame: Optional[ChartFrame] = None) -> TangentVector:
        frame = frame or self.geometry.chart_frame(p)
        return TangentVector(components=self.field_components(h, frame), frame=frame)

    def homogeneous_field(self, h: Hamiltonian, t: float = 1.0) -> HomogeneousField:
        """Hamiltonian field of h restricted to the hypersurface, as a velocity at any representative"""

        def field(x: np.ndarray, y: np.ndarray):
            frame = self.geometry.chart_frame(raw_flag(x, y, t))
            dx, dy = frame.to_homogeneous(self.field_components(h, frame))
            i, j = frame.chart_id
            return x[i] * dx, y[j] * dy

        return field

    def poisson(self, f: Hamiltonian, g: Hamiltonian, p: FlagPoint) -> float:
        frame = self.geometry.chart_frame(p)
        return self.geometry.omega(frame, self.field_components(f, frame), self.field_components(g, frame))

    def symbol_flow_coords(self, f: SymbolFunction, x: np.ndarray, y: np.ndarray, time: float):
        gen_x, gen_y = f.generators()
        return expm(gen_x * time) @ x, expm(gen_y * time) @ y

    def exact_flow(self, f: SymbolFunction, p: FlagPoint, time: float) -> FlagPoint:
        """Closed-form flow of a symbol tangent to the hypersurface"""
        if not f.is_balanced():
            raise UnbalancedIntegrals(f"{f.name} does not preserve the hypersurface")
        x, y = self.symbol_flow_coords(f, p.x.coords, p.y.coords, time)
        return FlagPoint(x=self.geometry.normalize(x), y=self.geometry.normalize(y), t=p.t)

    def exact_pushforward(
        self, f: SymbolFunction, frame: ChartFrame, fields: np.ndarray, time: float
    ) -> Tuple[ChartFrame, np.ndarray]:
        """Chart frame at the image point and the images of chart tangent fields under the closed-form flow"""
        if not f.is_balanced():
            raise UnbalancedIntegrals(f"{f.name} does not preserve the hypersurface")
        gen_x, gen_y = f.generators()
        ux, uy = expm(gen_x * time), expm(gen_y * time)
        x, y = ux @ frame.x_rep, uy @ frame.y_rep
        image = FlagPoint(x=self.geometry.normalize(x), y=self.geometry.normalize(y), t=frame.t)
        target = self.geometry.chart_frame(image)
        moved = []
        for components in np.atleast_2d(fields):
            dx, dy = frame.to_homogeneous(components)
            moved.append(self.geometry.from_homogeneous(target, ux @ dx, uy @ dy, x, y))
        return target, np.array(moved)

    def ambient_flow(self, f: SymbolFunction, x: np.ndarray, y: np.ndarray, time: float) -> AmbientPoint:
        x, y = self.symbol_flow_coords(f, x, y, time)
        return self.geometry.make_ambient(x, y)

    def flow(
        self,
        h: Hamiltonian,
        p: FlagPoint,
        time: float,
        tol: Optional[float] = None,
    ) -> FlowResult:
        """Adaptive integration of the Hamiltonian field with re-projection after every chunk"""
        tol = tol or settings.flow_tol
        energy0 = h.value(p.x.coords, p.y.coords)
        result = self.integrate_field(self.homogeneous_field(h, p.t), p, time, tol, monitor=h)
        logger.debug(
            "flow_integrated", time=time, energy=energy0, drift=result.energy_drift,
            residual=result.max_residual,
        )
        return result

    def integrate_field(
        self,
        field: HomogeneousField,
        p: FlagPoint,
        time: float,
        tol: Optional[float] = None,
        monitor: Optional[Hamiltonian] = None,
    ) -> FlowResult:
        tol = tol or settings.flow_tol
        if abs(time) >= 1e3:
            raise ValueError("flow time must be below 1e3 in modulus")
        current = p
        path, times = [p], [0.0]
        energy0 = monitor.value(p.x.coords, p.y.coords) if monitor is not None else 0.0
        drift = residual = 0.0
        if time == 0:
            return FlowResult(end=p, times=np.array(times), path=path)

        n_chunks = max(1, int(np.ceil(abs(time) / _CHUNK)))
        edges = np.linspace(0.0, time, n_chunks + 1)

        def rhs(_, state):
            dx, dy = field(state[:3] + 1j * state[3:6], state[6:9] + 1j * state[9:])
            return np.concatenate([dx.real, dx.imag, dy.real, dy.imag])

        for start, stop in zip(edges[:-1], edges[1:]):
            state = np.concatenate([
                current.x.coords.real, current.x.coords.imag,
                current.y.coords.real, current.y.coords.imag,
            ])
            solution = solve_ivp(
                rhs, (start, stop), state, method="DOP853",
                rtol=tol * 1e-3, atol=tol * 1e-5,
            )
            if solution.status < 0:
                logger.warning("flow_step_collapse", time=float(start), message=solution.message)
                raise StepCollapse(solution.message)
            final = solution.y[:, -1]
            x = final[:3] + 1j * final[3:6]
            y = final[6:9] + 1j * final[9:]
            residual = max(residual, self.geometry.flag_residual(x, y, p.t))
            current = self.geometry.project_to_flag(x, y, p.t)
            if monitor is not None:
                drift = max(drift, abs(monitor.value(current.x.coords, current.y.coords) - energy0))
            path.append(current)
            times.append(float(stop))

        return FlowResult(
            end=current, times=np.array(times), path=path, energy_drift=drift, max_residual=residual
        )

    def pushforward(
        self,
        flow_map: Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]],
        p: FlagPoint,
        step: float = 1e-6,
    ) -> Tuple[np.ndarray, ChartFrame, ChartFrame]:
        """Central-difference differential of a map of the hypersurface, in charts at p and its image"""
        source = self.geometry.chart_frame(p)
        x_image, y_image = flow_map(p.x.coords, p.y.coords)
        target = self.geometry.chart_frame(self.geometry.project_to_flag(x_image, y_image, p.t))
        matrix = np.zeros((6, 6))
        for col in range(6):
            direction = np.zeros(6)
            direction[col] = step
            images = []
            for sign in (1.0, -1.0):
                zeta = source.coordinates + sign * source.to_complex(direction)
                images.append(self.geometry.chart_coordinates(target, *flow_map(*self.geometry.parametrize(source, zeta))))
            delta = (images[0] - images[1]) / (2 * step)
            matrix[:, col] = np.concatenate([delta.real, delta.imag])
        return matrix, source, target

    def holomorphic_defect(self, matrix: np.ndarray) -> float:
        """Failure of a chart differential to commute with the complex structure"""
        return float(np.linalg.norm(matrix @ COMPLEX_STRUCTURE - COMPLEX_STRUCTURE @ matrix) / np.linalg.norm(matrix))


def raw_flag(x: np.ndarray, y: np.ndarray, t: float = 1.0) -> FlagPoint:
    """FlagPoint around unnormalized representatives, for chart work inside integrators"""
    return FlagPoint(x=ProjectivePoint(coords=x), y=ProjectivePoint(coords=y), t=t)


# Global service instance
dynamics_service = DynamicsService()
