import numpy as np
import pytest

from app.models.errors import DomainMismatch, UnbalancedIntegrals
from app.models.geometry import Domain
from app.models.symbols import IntegralPair, SymbolFunction
from app.services.dynamics_service import dynamics_service, operator_hamiltonian, symbol_from_eigenvalues
from app.services.geometry_service import geometry_service, horizontal
from config.settings import Settings


def test_default_integrals_are_balanced(integrals):
    assert integrals.f1.is_balanced()
    assert integrals.f2.is_balanced()
    assert integrals.affine_determinant != 0


def test_integrals_poisson_commute(integrals, flags):
    worst = max(abs(dynamics_service.poisson(integrals.f1, integrals.f2, p)) for p in flags)
    assert worst < 1e-8


def test_poisson_bracket_is_antisymmetric(integrals, flag, rng):
    raw = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    other = operator_hamiltonian((raw + raw.conj().T) / 2)
    forward = dynamics_service.poisson(integrals.f1, other, flag)
    backward = dynamics_service.poisson(other, integrals.f1, flag)
    assert forward == pytest.approx(-backward)
    assert abs(forward) > 1e-6


def test_operator_hamiltonian_reproduces_default_integrals(integrals, flag):
    f1 = operator_hamiltonian(np.diag([0.0, 1.0, 2.0]), shift=2.0)
    f2 = operator_hamiltonian(np.diag([0.0, 1.0, 3.0]), shift=3.0)
    x, y = flag.x.coords, flag.y.coords
    assert f1.value(x, y) == pytest.approx(integrals.f1.value(x, y))
    assert f2.value(x, y) == pytest.approx(integrals.f2.value(x, y))


def test_integral_pair_rejects_dependent_triples():
    with pytest.raises(ValueError):
        IntegralPair(
            f1=symbol_from_eigenvalues([0, 1, 2], [2, 1, 0]),
            f2=symbol_from_eigenvalues([0, 2, 4], [4, 2, 0]),
        )


def test_symbol_rejects_non_hermitian_matrices():
    with pytest.raises(ValueError):
        SymbolFunction(matrix_x=np.array([[0, 1], [0, 0]], dtype=complex))


def test_exact_flow_preserves_the_flag_variety_and_the_integrals(integrals, flag):
    moved = dynamics_service.exact_flow(integrals.f1, flag, 0.7)
    assert geometry_service.flag_residual(moved.x, moved.y) < 1e-12
    for f in (integrals.f1, integrals.f2):
        assert f.value(moved.x.coords, moved.y.coords) == pytest.approx(f.value(flag.x.coords, flag.y.coords))


def test_exact_flow_refuses_unbalanced_symbols(flag):
    with pytest.raises(UnbalancedIntegrals):
        dynamics_service.exact_flow(symbol_from_eigenvalues([0, 1, 2], [2, 1, 1]), flag, 0.1)


def test_adaptive_flow_agrees_with_exact_flow(integrals, flag):
    result = dynamics_service.flow(integrals.f2, flag, 0.3)
    exact = dynamics_service.exact_flow(integrals.f2, flag, 0.3)
    assert geometry_service.flag_distance(result.end, exact) < 1e-7
    assert result.energy_drift < 1e-8
    assert result.max_residual < 1e-8


def test_zero_time_flow_returns_the_start(integrals, flag):
    assert dynamics_service.flow(integrals.f1, flag, 0.0).end is flag


def test_flow_rejects_huge_times(integrals, flag):
    with pytest.raises(ValueError):
        dynamics_service.flow(integrals.f1, flag, 1e4)


def test_homogeneous_field_is_the_symbol_generator(integrals, flag):
    x, y = flag.x.coords, flag.y.coords
    dx, dy = dynamics_service.homogeneous_field(integrals.f1)(x, y)
    gen_x, gen_y = integrals.f1.generators()
    assert np.allclose(horizontal(x, dx), horizontal(x, gen_x @ x), atol=1e-10)
    assert np.allclose(horizontal(y, dy), horizontal(y, gen_y @ y), atol=1e-10)


def test_symbol_flows_are_holomorphic(integrals, flag):
    def flow_map(x, y):
        return dynamics_service.symbol_flow_coords(integrals.f1, x, y, 0.4)

    matrix, _, _ = dynamics_service.pushforward(flow_map, flag)
    assert dynamics_service.holomorphic_defect(matrix) < 1e-5


def test_unbalanced_configs_are_only_loaded_on_request():
    config = Settings(f1_y=[2.0, 1.0, 1.0], allow_unbalanced=True)
    pair = dynamics_service.integrals_from_settings(config)
    with pytest.raises(UnbalancedIntegrals):
        dynamics_service.require_balanced(pair)


def test_base_symbols_cannot_be_evaluated_on_pairs(flag):
    g = SymbolFunction(matrix_x=np.eye(3, dtype=complex), defined_on=Domain.BASE_CP2W)
    with pytest.raises(DomainMismatch):
        dynamics_service.eval_symbol(g, flag)


@pytest.mark.parametrize("name", ["f1", "f2"])
def test_hamiltonian_field_pairs_to_the_differential(integrals, flags, rng, name):
    f = getattr(integrals, name)
    eps = 1e-6
    for p in flags[:5]:
        frame = geometry_service.chart_frame(p)
        field = dynamics_service.ham_field(f, p, frame).components
        v = rng.normal(size=6)
        values = [
            f.value(*geometry_service.parametrize(frame, frame.coordinates + s * frame.to_complex(v)))
            for s in (eps, -eps)
        ]
        derivative = (values[0] - values[1]) / (2 * eps)
        assert geometry_service.omega(frame, field, v) == pytest.approx(derivative, rel=1e-6, abs=1e-8)


def test_integral_flows_commute(integrals, flags):
    for p in flags[:5]:
        one = dynamics_service.exact_flow(integrals.f2, dynamics_service.exact_flow(integrals.f1, p, 0.3), 0.7)
        other = dynamics_service.exact_flow(integrals.f1, dynamics_service.exact_flow(integrals.f2, p, 0.7), 0.3)
        assert geometry_service.flag_distance(one, other) < 1e-12


def test_adaptive_integral_flows_commute(integrals, flag):
    first = dynamics_service.flow(integrals.f1, flag, 0.3).end
    one = dynamics_service.flow(integrals.f2, first, 0.5).end
    second = dynamics_service.flow(integrals.f2, flag, 0.5).end
    other = dynamics_service.flow(integrals.f1, second, 0.3).end
    assert geometry_service.flag_distance(one, other) < 1e-7


def test_exact_pushforward_matches_the_finite_difference_differential(integrals, flag, rng):
    def flow_map(x, y):
        return dynamics_service.symbol_flow_coords(integrals.f2, x, y, 0.4)

    matrix, source, target = dynamics_service.pushforward(flow_map, flag)
    fields = rng.normal(size=(3, 6))
    frame, moved = dynamics_service.exact_pushforward(integrals.f2, source, fields, 0.4)
    expected = [geometry_service.transfer(geometry_service.tangent(target, matrix @ v), frame).components for v in fields]
    assert np.allclose(moved, expected, atol=1e-6)


def test_exact_pushforward_carries_integral_fields_to_themselves(integrals, flag):
    frame = geometry_service.chart_frame(flag)
    fields = np.array([dynamics_service.field_components(f, frame) for f in (integrals.f1, integrals.f2)])
    target, moved = dynamics_service.exact_pushforward(integrals.f1, frame, fields, 0.9)
    expected = [dynamics_service.field_components(f, target) for f in (integrals.f1, integrals.f2)]
    assert np.allclose(moved, expected, atol=1e-10)
