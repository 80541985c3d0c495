import numpy as np
import pytest
from hypothesis import assume, given, settings as hypothesis_settings, strategies as st

from app.models.errors import InsufficientSamples, OnDivisor
from app.models.fibration import HeightMode
from app.services.fibration_service import fibration_service
from app.services.flagconn_service import flagconn_service
from app.services.geometry_service import geometry_service
from app.services.special_service import REFERENCE_FLAG, special_service

WRONG_POINTS = (np.array([0.0, 1.0, -1.0]), np.array([1.0, -1.0, 0.0]))

moduli = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


@pytest.fixture(scope="module")
def symbol_height():
    return fibration_service.make_height(np.array([0.0, 1.0, -1.0]), mode=HeightMode.SYMBOL)


@pytest.fixture(scope="module")
def divisor(symbol_height):
    return special_service.divisor_for(symbol_height)


@pytest.fixture(scope="module")
def tori(symbol_height):
    tori = []
    for level, labels in ((-0.5, (2.0, 3.3)), (0.3, (1.5, 2.4))):
        loop = fibration_service.trace_loop(symbol_height, level, 8)
        tori.append(fibration_service.sample_torus(
            loop, *labels, res=2, h=symbol_height, loop_stride=4, rng=np.random.default_rng(11)
        ))
    return tori


def test_default_divisor_is_the_product_of_two_coordinates():
    divisor = special_service.divisor_for(fibration_service.default_height())
    x = np.array([1.0, 2.0, 3.0])
    y = np.array([1.0, 1.0, -1.0])
    assert divisor.section(x, y) == pytest.approx(x[0] * y[0] * x[1] * y[1])


@hypothesis_settings(max_examples=40, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2 ** 31 - 1), a=moduli, b=moduli, phi=moduli, chi=moduli)
def test_section_scales_with_bidegree_two_two(divisor, seed, a, b, phi, chi):
    p = geometry_service.random_flag(np.random.default_rng(seed))
    lam, mu = np.exp(a + 1j * phi), np.exp(b + 1j * chi)
    x, y = p.x.coords, p.y.coords
    base = divisor.section(x, y)
    assume(abs(base) > 1e-6)
    assert divisor.section(lam * x, mu * y) == pytest.approx(lam ** 2 * mu ** 2 * base, rel=1e-10)


def test_gauge_makes_the_reference_value_real_positive(divisor):
    reference = geometry_service.make_flag(*REFERENCE_FLAG)
    value = special_service.frame_theta(geometry_service.chart_frame(reference), np.eye(6)[:3], divisor)
    assert value.real > 0
    assert abs(value.imag) < 1e-12 * value.real


def test_residue_form_agrees_across_charts(divisor, flags, rng):
    for p in flags[:10]:
        assert special_service.chart_consistency(p, divisor, rng) < 1e-7


def test_residue_form_has_a_pole_on_the_divisor():
    divisor = special_service.divisor_for(fibration_service.default_height())
    p = geometry_service.make_flag(np.array([0.0, 2.0, 1.0]), np.array([1.0, 1.0, -2.0]))
    with pytest.raises(OnDivisor):
        special_service.theta_D(p, *np.eye(6)[:3], divisor)
    profile = special_service.pole_profile(p, divisor, np.array([1.0, 0.0, 0.0]), np.array([1e-3, 1e-4, 1e-5]))
    assert np.all(np.isfinite(profile))
    assert profile.max() / profile.min() < 1.01


def test_fibers_are_special_for_the_boundary_divisor(tori, divisor):
    report = special_service.specialty_report(tori, divisor, "symbol")
    assert report.special
    assert len(report.per_fiber) == 2
    assert all(stats.n == 8 for stats in report.per_fiber)
    assert -np.pi <= report.s <= np.pi


def test_wrong_divisor_is_not_special(tori):
    wrong = special_service.make_divisor(WRONG_POINTS)
    assert not special_service.specialty_report(tori, wrong, "symbol").special


def test_specialty_needs_fibers(divisor):
    with pytest.raises(InsufficientSamples):
        special_service.specialty_report([], divisor, "symbol")


@pytest.mark.parametrize("field", ["f1", "f2", "lift"])
def test_residue_phase_is_invariant_along_frame_flows(field, symbol_height, divisor, flag):
    assert special_service.lie_invariance_check(field, flag, 1e-4, symbol_height, divisor) < 1e-5


def test_residue_phase_moves_along_a_generic_flow(symbol_height, divisor, flag, rng):
    control = flagconn_service.control_symbol(rng)
    assert special_service.lie_invariance_check(control, flag, 1e-4, symbol_height, divisor) > 1e-2
