import numpy as np
import pytest

from app.models.errors import OnBaseSet
from app.models.geometry import BaseSetKind, FiberTag
from app.services.fibration_service import fibration_service
from app.services.geometry_service import geometry_service
from app.services.pseudotoric_service import BASE_SET_LINES, base_field, line_normal, pseudotoric_service


def test_psi_lands_on_the_image_line(flags):
    assert max(pseudotoric_service.image_residual(pseudotoric_service.psi(p).coords) for p in flags) < 1e-10


def test_psi_is_undefined_where_every_product_vanishes():
    p = geometry_service.make_flag(np.array([1, 0, 0]), np.array([0, 1, 0]))
    with pytest.raises(OnBaseSet):
        pseudotoric_service.psi(p)


def test_base_set_has_six_lines():
    assert len(BASE_SET_LINES) == 6
    assert sum(line.kind == BaseSetKind.XXY for line in BASE_SET_LINES) == 3


def test_in_base_set_finds_the_line():
    p = geometry_service.make_flag(np.array([0, 0, 1]), np.array([1, 2, 0]))
    line = pseudotoric_service.in_base_set(p)
    assert line.kind == BaseSetKind.XXY
    assert line.indices == (0, 1, 2)


def test_generic_flags_avoid_the_base_set(flags):
    assert all(pseudotoric_service.in_base_set(p) is None for p in flags)


def test_three_singular_base_points():
    points = pseudotoric_service.singular_base_points()
    assert len(points) == 3
    for point in points:
        assert np.sum(np.abs(point.coords) < 1e-12) == 1
        assert pseudotoric_service.image_residual(point.coords) < 1e-12


@pytest.mark.parametrize(
    "coords, tag, index",
    [
        ([1, 1, -2], FiberTag.GENERIC, None),
        ([0, 1, -1], FiberTag.ONE_ZERO, 0),
        ([1, 0, 0], FiberTag.TWO_ZERO, 0),
    ],
)
def test_classify_fiber_point(coords, tag, index):
    w = geometry_service.normalize(np.array(coords, dtype=complex))
    fiber_class = pseudotoric_service.classify_fiber_point(w)
    assert fiber_class.tag == tag
    assert fiber_class.index == index
    assert fiber_class.is_singular == (tag != FiberTag.GENERIC)


def test_integral_fields_are_tangent_to_the_fibers(flags):
    integrals = pseudotoric_service.integrals
    for p in flags[:10]:
        frame = geometry_service.chart_frame(p)
        matrix, _ = pseudotoric_service.psi_differential(frame)
        for f in (integrals.f1, integrals.f2):
            assert np.linalg.norm(matrix @ pseudotoric_service.dynamics.field_components(f, frame)) < 1e-8


def test_integrals_are_independent_off_the_simplex(flags):
    assert all(pseudotoric_service.simplex_rank(p) == 2 for p in flags[:10])


def test_integrals_are_dependent_on_the_base_set():
    p = geometry_service.make_flag(np.array([0, 0, 1]), np.array([1, 2, 0]))
    assert pseudotoric_service.simplex_rank(p) == 1


def test_horizontal_lift_covers_the_base_vector_and_is_orthogonal_to_the_fiber(flag):
    frame = geometry_service.chart_frame(flag)
    u = np.array([0.3, -0.7])
    lifted = pseudotoric_service.lift_components(frame, u)
    matrix, kernel = pseudotoric_service.fiber_kernel(frame)
    assert np.allclose(matrix @ lifted, u, atol=1e-10)
    assert np.allclose(kernel.T @ frame.omega @ lifted, 0.0, atol=1e-10)


def test_horizontal_lift_is_positive_multiple_of_pulled_back_field(flags):
    h = fibration_service.default_height()
    for p in flags[:10]:
        tau, residual = pseudotoric_service.compatibility_check(p, h)
        assert tau > 0
        assert residual < 1e-6


def test_d_psi_of_lift_returns_the_base_field(flag):
    h = fibration_service.default_height()
    frame = geometry_service.chart_frame(flag)
    w = pseudotoric_service.psi(flag).coords
    u = pseudotoric_service.base_tangent(w, base_field(h, w, line_normal()))
    lift = pseudotoric_service.horizontal_lift(flag, u)
    image = pseudotoric_service.d_psi(flag, lift.lifted)
    assert np.allclose(image.components, u.components, atol=1e-9)
    assert lift.lifted.frame.chart_id == frame.chart_id


def test_distance_to_simplex_vanishes_on_sing():
    x = np.array([0, 1, 1], dtype=complex)
    y = np.array([0, 1, -1], dtype=complex)
    assert pseudotoric_service.distance_to_simplex(x, y) == pytest.approx(0.0, abs=1e-15)


def test_lift_field_is_tangent_to_the_flag_variety(flag):
    h = fibration_service.default_height()
    dx, dy = pseudotoric_service.lift_field(h)(flag.x.coords, flag.y.coords)
    x, y = flag.x.coords, flag.y.coords
    assert abs(np.sum(dx * y + x * dy)) < 1e-10
