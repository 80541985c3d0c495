import numpy as np
import pytest
from pydantic import ValidationError

from app.models.flagconn import FlagAsPair, FlagClass, SchubertMembership
from app.services.flagconn_service import flagconn_service
from app.services.geometry_service import geometry_service


@pytest.fixture
def pair(flag):
    return flagconn_service.from_flag_point(flag)


def test_flag_round_trip(flag, pair):
    back = flagconn_service.to_flag_point(pair)
    assert geometry_service.flag_distance(flag, back) < 1e-7
    assert flagconn_service.pi_project(pair) is pair.p


def test_pair_requires_incidence():
    with pytest.raises(ValidationError):
        FlagAsPair(
            p=geometry_service.normalize(np.array([1.0, 0.0, 0.0])),
            l=geometry_service.normalize(np.array([1.0, 1.0, 0.0])),
        )


def test_projected_field_is_the_field_on_cp2(pair, rng):
    raw = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    residual, kappa = flagconn_service.dpi_relation_check((raw + raw.conj().T) / 2, pair)
    assert residual < 1e-6
    assert kappa == pytest.approx(1.0, abs=1e-6)


def test_projected_field_of_the_identity_vanishes(pair):
    residual, kappa = flagconn_service.dpi_relation_check(np.eye(3), pair)
    assert residual < 1e-10
    assert np.isnan(kappa)


def test_distribution_is_four_dimensional_and_complex(pair):
    vectors = flagconn_service.horizontal_distribution(pair)
    assert len(vectors) == 4
    assert flagconn_service.invariance_residual(vectors) < 1e-10


@pytest.mark.parametrize("step", [1e-2, 1e-3])
def test_distribution_is_integrable(pair, step):
    assert flagconn_service.frobenius_residual(pair, step) < 1e-4


def test_generic_field_breaks_integrability(pair, rng):
    control = flagconn_service.control_symbol(rng)
    assert flagconn_service.frobenius_residual(pair, 1e-3, replace_last=control) > 1e-3


def test_orbits_stay_in_one_fiber(pair):
    orbit = flagconn_service.orbit_grid(pair, np.linspace(-2.0, 2.0, 5))
    assert len(orbit) == 25
    assert flagconn_service.orbit_psi_spread(orbit) < 1e-12


def test_orbit_projection_fills_the_triangle(pair):
    assert flagconn_service.orbit_coverage(pair, np.linspace(-4.0, 4.0, 41)) > 0.8
    assert flagconn_service.coverage([]) == 0.0


def test_horizontal_section_records_the_seed_class(pair):
    section = flagconn_service.horizontal_section(pair, [0.0, 1.0])
    assert section.classification.kind == FlagClass.GENERIC
    assert len(section.grid) == 4


def test_pencil_has_one_line_through_each_vertex():
    lines = flagconn_service.pencil_vertex_lines(np.array([1.0, 2.0, 3.0]))
    assert len(lines) == 3
    vertices = [flagconn_service.classify_flag(line) for line in lines]
    assert all(v.kind == FlagClass.THROUGH_VERTEX for v in vertices)
    assert sorted(v.vertex for v in vertices) == [0, 1, 2]


def test_pencil_through_a_vertex_has_two_lines():
    assert len(flagconn_service.pencil_vertex_lines(np.array([1.0, 0.0, 0.0]))) == 2


def test_schubert_cells_are_invariant():
    f = flagconn_service.make_pair(np.array([1.0, 1.0, 1.0]), np.array([0.0, 1.0, -1.0]))
    assert flagconn_service.schubert_membership(f) == SchubertMembership.IN_D_P0
    assert flagconn_service.schubert_flow_residual(f) < 1e-14
    g = flagconn_service.make_pair(np.array([0.0, 1.0, 1.0]), np.array([1.0, 1.0, -1.0]))
    assert flagconn_service.schubert_membership(g) == SchubertMembership.IN_D_L0
    assert flagconn_service.schubert_flow_residual(g) < 1e-14


def test_schubert_membership_of_a_generic_flag(pair):
    assert flagconn_service.schubert_membership(pair) == SchubertMembership.NEITHER


def test_simplex_images(rng):
    base_excess, sing_excess = flagconn_service.simplex_images(rng, per_line=4)
    assert np.max(np.abs(base_excess)) < 1e-9
    assert np.max(sing_excess) < -1e-9
