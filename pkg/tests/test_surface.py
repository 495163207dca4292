import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from curvlab.errors import DomainExit, ValidationError
from curvlab.surface import (FlatTorus, HyperbolicQuotient, Revolution, SyntheticProfile,
                             geodesic_flow, preset, tangent_flow, validate_nonpositive,
                             vertical_growth)


@pytest.fixture(scope="module")
def bolza():
    return HyperbolicQuotient.bolza()


def test_validate_flat_torus():
    rep = validate_nonpositive(FlatTorus(1, 1), 100)
    assert rep.passed and rep.K0 == 0.0 and rep.max_curvature == 0.0


def test_validate_bolza(bolza):
    rep = validate_nonpositive(bolza, 100)
    assert rep.passed
    assert rep.K0 == pytest.approx(1.0)
    assert rep.min_curvature == pytest.approx(-1.0)


def test_validate_revolution_matches_second_derivative():
    # r(u) = 1 + 0.5 cosh(2u): K = -r''/r = -2 cosh(2u) / (1 + 0.5 cosh 2u)
    m = Revolution([1.0, 0.0, 0.5], -3.0, 3.0)
    u = np.linspace(-3, 3, 7)
    assert np.allclose(m.curvature(u), -2 * np.cosh(2 * u) / (1 + 0.5 * np.cosh(2 * u)))
    assert validate_nonpositive(m, 100).passed


def test_validate_rejects_bad_input():
    with pytest.raises(ValidationError):
        validate_nonpositive(None)
    with pytest.raises(ValidationError):
        validate_nonpositive(FlatTorus(), 0)
    with pytest.raises(ValidationError):
        Revolution([1.0, -0.5])   # r = 1 - 0.5 cosh u turns negative
    with pytest.raises(ValidationError):
        preset("sphere")


def test_flat_flow_is_straight_line():
    m = FlatTorus(1, 1)
    s = m.state(0.2, 0.9, math.atan2(0.6, 0.8))
    out = geodesic_flow(m, s, 2.5)
    assert np.allclose(out.position, [(0.2 + 2.0) % 1, (0.9 + 1.5) % 1])
    assert np.allclose(tangent_flow(m, s, 3.0), [[1, 3], [0, 1]])


def test_bolza_identity_and_tangent(bolza):
    s = bolza.random_state(np.random.default_rng(1))
    assert bolza.distance(geodesic_flow(bolza, s, 0.0), s) < 1e-12
    t = 2.0
    assert np.allclose(tangent_flow(bolza, s, t), [[math.cosh(t), math.sinh(t)], [math.sinh(t), math.cosh(t)]])
    assert vertical_growth(bolza, s, t) == pytest.approx(math.hypot(math.sinh(t), math.cosh(t)))


def test_bolza_flow_composes(bolza):
    s = bolza.random_state(np.random.default_rng(2))
    a = bolza.flow(bolza.flow(s, 1.3), 2.1)
    b = bolza.flow(s, 3.4)
    assert bolza.distance(a, b) < 1e-8


def test_bolza_states_stay_in_fundamental_domain(bolza):
    rng = np.random.default_rng(3)
    R = bolza.fundamental_radius()
    for _ in range(20):
        s = bolza.flow(bolza.random_state(rng), rng.uniform(0, 30))
        assert abs(complex(*bolza.chart_coords(s)[:2])) <= R + 1e-6


def test_revolution_clairaut_conserved():
    m = Revolution.catenoid(-120.0, 120.0)   # orbit drifts up to |u| ~ t
    s = m.state(0.1, 0.0, 1.2)
    out = m.flow(s, 100.0)
    fine = m.flow(s, 100.0, step=0.005)
    assert abs(m.clairaut(out) - m.clairaut(s)) < 1e-8
    assert m.distance(out, fine) < 1e-6


def test_revolution_wronskian():
    m = Revolution.catenoid()
    phi = tangent_flow(m, m.state(0.2, 0.0, 1.0), 5.0)
    assert abs(np.linalg.det(phi) - 1.0) < 1e-6


def test_revolution_domain_exit():
    m = Revolution.catenoid(-2.0, 2.0)
    with pytest.raises(DomainExit):
        m.flow(m.state(0.0, 0.0, 0.0), 10.0)   # along a meridian


def test_waist_is_closed_geodesic():
    m = Revolution.catenoid()
    s = m.waist_state()
    out = m.flow(s, 2 * math.pi)
    assert abs(out.position[0]) < 1e-9
    assert m.distance(out, s) < 1e-6


def test_synthetic_profile_has_no_flow():
    p = SyntheticProfile.constant(-1.0)
    with pytest.raises(ValidationError):
        geodesic_flow(p, p.state(), 1.0)
    with pytest.raises(DomainExit):
        p.curvature_along(p.state(390.0), 20.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(-3.0, 3.0))
def test_tangent_flow_has_unit_determinant(t, u0):
    m = Revolution([2.0, 1.0])
    phi = tangent_flow(m, m.state(u0, 0.0, 0.7), t)
    assert abs(np.linalg.det(phi) - 1.0) < 1e-6
