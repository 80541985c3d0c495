import numpy as np
import pytest

from app.models.errors import DegeneratePair, DomainMismatch, LevelOutOfRange, NoSolution
from app.models.fibration import HeightMode, PulledBackFunction, TorusType
from app.services.fibration_service import fibration_service, frame_isotropy, segment_distance
from app.services.geometry_service import COMPLEX_STRUCTURE
from app.services.pseudotoric_service import pseudotoric_service

HEXAGON = [(0.0, 0.0), (1.0, 1.0), (1.0, 2.0), (3.0, 4.0), (3.0, 5.0), (4.0, 6.0)]


@pytest.fixture
def mobius():
    return fibration_service.default_height()


@pytest.fixture
def symbol():
    return fibration_service.make_height(np.array([0.0, 1.0, -1.0]), mode=HeightMode.SYMBOL)


def small_torus(h, level=-0.5, labels=(2.0, 3.3)):
    loop = fibration_service.trace_loop(h, level, 8)
    return fibration_service.sample_torus(
        loop, *labels, res=2, h=h, loop_stride=4, rng=np.random.default_rng(7)
    )


def test_height_takes_its_extremes_at_the_critical_points(mobius):
    assert mobius.value(mobius.max_point.coords) == pytest.approx(1.0)
    assert mobius.value(mobius.min_point.coords) == pytest.approx(-1.0)


def test_symbol_height_has_orthogonal_critical_points(symbol):
    assert abs(np.vdot(symbol.max_point.coords, symbol.min_point.coords)) < 1e-12
    assert symbol.value(symbol.min_point.coords) == pytest.approx(-1.0)


def test_height_needs_points_on_the_line():
    with pytest.raises(DomainMismatch):
        fibration_service.make_height(np.array([1.0, 1.0, 1.0]), np.array([1.0, 0.0, -1.0]))


def test_mobius_height_needs_distinct_points():
    a = np.array([0.0, 1.0, -1.0])
    with pytest.raises(DegeneratePair):
        fibration_service.make_height(a, 2 * a)


@pytest.mark.parametrize("level", [-0.5, 0.0, 0.6])
def test_level_loop_stays_on_its_level(mobius, level):
    loop = fibration_service.trace_loop(mobius, level, 16)
    assert loop.closed
    assert loop.max_residual < 1e-10
    assert all(pseudotoric_service.image_residual(w.coords) < 1e-10 for w in loop.samples)


def test_symbol_loop_closes_after_a_quarter_turn(symbol):
    loop = fibration_service.trace_loop(symbol, 0.3, 16)
    assert loop.closed
    assert loop.max_residual < 1e-10


@pytest.mark.parametrize("level", [-1.0, 1.0, 1.5])
def test_levels_outside_the_open_range_are_rejected(mobius, level):
    with pytest.raises(LevelOutOfRange):
        fibration_service.trace_loop(mobius, level)


def test_seed_point_attains_the_requested_integrals(mobius):
    w = fibration_service.trace_loop(mobius, 0.3, 4).samples[1]
    seed = fibration_service.seed_point(w, 2.0, 3.3, rng=np.random.default_rng(3))
    values = pseudotoric_service.integrals.values(seed.x.coords, seed.y.coords)
    assert np.allclose(values, (2.0, 3.3), atol=1e-9)
    assert np.allclose(pseudotoric_service.psi(seed).coords, w.coords, atol=1e-9)


def test_seed_point_outside_the_hexagon_has_no_solution(mobius):
    w = fibration_service.trace_loop(mobius, 0.3, 4).samples[1]
    with pytest.raises(NoSolution) as excinfo:
        fibration_service.seed_point(w, 10.0, -3.0, rng=np.random.default_rng(3))
    assert excinfo.value.attained is not None


def test_no_torus_over_a_vertex_of_the_triangle():
    w = fibration_service.geometry.normalize(np.array([1.0, 0.0, 0.0]))
    with pytest.raises(NoSolution):
        fibration_service.seed_point(w, 2.0, 3.3)


def test_smooth_torus_samples_are_accurate_and_lagrangian(mobius):
    torus = small_torus(mobius)
    assert torus.fiber_type == TorusType.SMOOTH
    assert torus.loop_indices == [0, 4]
    assert fibration_service.sample_residual(torus) < 1e-8
    assert fibration_service.lagrangian_residual(torus) < 1e-6


def test_loop_transport_closes_on_the_starting_orbit(mobius):
    torus = small_torus(mobius)
    assert torus.holonomy < 1e-5
    assert torus.cross_check < 1e-6
    assert torus.periods == pytest.approx((np.pi, np.pi), abs=1e-8)


def test_lagrangian_residual_does_not_depend_on_the_mesh(mobius):
    loop = fibration_service.trace_loop(mobius, -0.5, 8)
    residuals = [
        fibration_service.lagrangian_residual(fibration_service.sample_torus(
            loop, 2.0, 3.3, res=res, h=mobius, loop_stride=4, rng=np.random.default_rng(7)
        ))
        for res in (2, 4)
    ]
    assert max(residuals) < 1e-6
    assert residuals[1] <= 2 * residuals[0] + 1e-9


def test_frame_with_a_rotated_direction_is_not_isotropic(mobius):
    frame, fields = small_torus(mobius).frames[0][0][0]
    control = np.vstack([fields[0], fields[1], COMPLEX_STRUCTURE @ fields[0]])
    assert frame_isotropy(frame.omega, control) > 1e-2


def test_loop_tangent_is_the_pulled_back_field(mobius):
    p = small_torus(mobius).samples[0][0][0]
    frame, tangent = fibration_service.loop_tangent(p, mobius)
    field = fibration_service.dynamics.field_components(PulledBackFunction(base=mobius), frame)
    assert np.allclose(tangent, field, atol=1e-6)


def test_torus_over_the_degenerate_member_is_lagrangian():
    from app.services.degeneration_service import degeneration_service

    h0 = degeneration_service.toric_h0()
    loop = fibration_service.trace_loop(h0, 0.2, 8)
    seed_w = max(loop.samples, key=lambda w: np.min(np.abs(w.coords))).coords
    c1, c2 = pseudotoric_service.integrals.values(*fibration_service.fiber_point(seed_w, np.zeros(2)))
    torus = fibration_service.sample_torus(loop, c1, c2, res=2, h=h0, loop_stride=4)
    assert fibration_service.sample_residual(torus) < 1e-8
    assert fibration_service.lagrangian_residual(torus) < 1e-6


def test_one_collapsed_family_for_the_minimal_fibration(mobius):
    families = fibration_service.collapsed_families(mobius)
    assert len(families) == 1
    point, level, segment = families[0]
    assert np.abs(point.coords)[2] < 1e-12
    assert sorted(map(tuple, segment)) == [(1.0, 2.0), (3.0, 4.0)]


def test_offset_critical_points_collapse_every_singular_family():
    h = fibration_service.make_height(np.array([1.0, 2.0, -3.0]), np.array([2.0, -1.0, -1.0]))
    assert len(fibration_service.collapsed_families(h)) == 3


def test_torus_classification_table(mobius):
    _, level, _ = fibration_service.collapsed_families(mobius)[0]
    loop = fibration_service.trace_loop(mobius, level, 8)
    assert fibration_service.classify_torus(loop, 2.0, 3.0, mobius) == TorusType.COLLAPSED
    assert fibration_service.classify_torus(loop, 2.0, 3.3, mobius) == TorusType.SMOOTH
    other = fibration_service.trace_loop(mobius, 0.5 * (level + (0.9 if level < 0.5 else -0.9)), 8)
    assert fibration_service.classify_torus(other, 2.0, 3.0, mobius) == TorusType.SMOOTH


def test_singular_segments_are_hexagon_diagonals():
    segments = fibration_service.singular_segments(5)
    ends = {i: sorted(map(tuple, np.round(segment[[0, -1]], 12))) for i, segment in segments.items()}
    assert ends[0] == [(1.0, 1.0), (3.0, 5.0)]
    assert ends[1] == [(0.0, 0.0), (4.0, 6.0)]
    assert ends[2] == [(1.0, 2.0), (3.0, 4.0)]


def test_moment_polygon_is_the_hexagon(flags):
    moment = fibration_service.moment_image(flags)
    assert len(moment.hull) == 6
    hull = sorted((round(a, 9), round(b, 9)) for a, b in moment.hull)
    assert hull == HEXAGON
    assert np.all(fibration_service.hull_excess(moment, np.array(moment.values)) < 1e-12)


def test_moment_image_needs_samples():
    with pytest.raises(ValueError):
        fibration_service.moment_image([])


def test_divisor_has_four_components(mobius, rng):
    assert fibration_service.divisor_components(mobius, rng) == ["x0", "x1", "y0", "y1"]


def test_segment_distance():
    start, end = np.array([0.0, 0.0]), np.array([2.0, 0.0])
    assert segment_distance(np.array([1.0, 1.0]), start, end) == pytest.approx(1.0)
    assert segment_distance(np.array([3.0, 0.0]), start, end) == pytest.approx(1.0)
