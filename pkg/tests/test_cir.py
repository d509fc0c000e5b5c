import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cirswitch import cir
from cirswitch.cir import UNBOUNDED_BELOW, CirParams, Costs
from cirswitch.errors import BracketError, DomainError

BASE = CirParams(mu=0.2, theta=0.2, sigma=0.3, r=0.05)  # reflecting: 2 mu theta < sigma^2
FELLER = CirParams(mu=0.6, theta=0.2, sigma=0.15, r=0.05)
COSTS = Costs(0.001, 0.001)


@pytest.mark.parametrize("p", [BASE, FELLER])
def test_f_and_g_solve_the_ode(p):
    y = np.linspace(0.01, 1.0, 60)
    for u, du, d2u in [(cir.f_of, cir.f_prime, cir.f_second), (cir.g_of, cir.g_prime, cir.g_second)]:
        exact = cir.generator_residual(p, lambda x: u(p, x), y, lambda x: du(p, x), lambda x: d2u(p, x))
        scale = p.r * np.abs(u(p, y)) + p.mu * np.abs(du(p, y))
        assert np.max(np.abs(exact) / scale) < 1e-12
        # second differences lose half the digits; this only checks the FD route
        fd = cir.generator_residual(p, lambda x: u(p, x), y, step=1e-4 * y)
        assert np.max(np.abs(fd) / scale) < 1e-4


@pytest.mark.parametrize("p", [BASE, FELLER])
def test_derivatives_match_central_differences(p):
    for y in (0.05, 0.2, 0.7):
        h = 1e-6
        assert cir.f_prime(p, y) == pytest.approx((cir.f_of(p, y + h) - cir.f_of(p, y - h)) / (2 * h), rel=1e-8)
        assert cir.g_prime(p, y) == pytest.approx((cir.g_of(p, y + h) - cir.g_of(p, y - h)) / (2 * h), rel=1e-7)
        assert cir.phi_prime(p, y) == pytest.approx((cir.phi(p, y + h) - cir.phi(p, y - h)) / (2 * h), rel=1e-7)


@pytest.mark.parametrize("p", [BASE, FELLER])
def test_abel_identity(p):
    # Wr' = -2 mu (theta - y)/(sigma^2 y) Wr  =>  Wr * y^b * e^{-kappa y} is constant
    y = np.linspace(0.02, 1.5, 40)
    inv = cir.wronskian(p, y) * y ** p.b * np.exp(-p.kappa * y)
    assert np.all(cir.wronskian(p, y) > 0)
    assert np.ptp(inv) / inv[0] < 1e-10


def test_critical_levels_formula():
    lv = cir.critical_levels(BASE, COSTS)
    assert lv.y_b == pytest.approx((0.2 * 0.2 - 0.05 * 0.001) / 0.25)
    assert lv.y_s == pytest.approx((0.2 * 0.2 + 0.05 * 0.001) / 0.25)
    assert lv.y_b < 0.2 * 0.2 / 0.25 < lv.y_s


def test_feller_flag_and_boundary():
    assert not BASE.feller
    assert FELLER.feller
    assert CirParams(mu=0.5, theta=0.09, sigma=0.3, r=0.05).feller  # 2 mu theta == sigma^2


def test_hypergeometric_parameters():
    assert BASE.a == pytest.approx(0.25)
    assert BASE.b == pytest.approx(0.08 / 0.09)
    assert BASE.kappa == pytest.approx(0.4 / 0.09)


@pytest.mark.parametrize("field", ["mu", "theta", "sigma", "r"])
@pytest.mark.parametrize("bad", [0.0, -0.1, math.nan, math.inf])
def test_params_validation(field, bad):
    kw = dict(mu=0.2, theta=0.2, sigma=0.3, r=0.05)
    kw[field] = bad
    with pytest.raises(ValueError):
        CirParams(**kw)


def test_costs_validation():
    with pytest.raises(ValueError):
        Costs(0.0, 0.001)
    with pytest.raises(ValueError):
        Costs(0.001, -1.0)


def test_phi_at_zero_by_regime():
    assert cir.phi_at_zero(FELLER) is UNBOUNDED_BELOW
    p0 = cir.phi_at_zero(BASE)
    assert math.isfinite(p0) and p0 < 0
    # phi(y) - phi(0) shrinks only like y^(1 - b)
    assert cir.phi(BASE, 1e-40) == pytest.approx(p0, rel=1e-3)
    assert p0 < cir.phi(BASE, 1e-40) < cir.phi(BASE, 1e-20)
    assert cir.phi(BASE, 0.0) == p0
    assert cir.g_of(BASE, 0.0) > 0
    with pytest.raises(DomainError):
        cir.g_of(FELLER, 0.0)
    with pytest.raises(DomainError):
        cir.g_prime(BASE, 0.0)


def test_level_domain():
    with pytest.raises(DomainError):
        cir.f_of(BASE, -0.1)
    with pytest.raises(DomainError):
        cir.f_of(BASE, math.nan)
    with pytest.raises(DomainError):
        cir.generator_residual(BASE, lambda x: x, 0.0)


@pytest.mark.parametrize("p", [BASE, FELLER])
def test_phi_inverse_roundtrip(p):
    y = np.array([1e-4, 0.01, 0.1, 0.2, 0.5, 1.0, 3.0])
    back = cir.phi_inverse(p, cir.phi(p, y))
    np.testing.assert_allclose(back, y, rtol=1e-9)
    assert isinstance(cir.phi_inverse(p, float(cir.phi(p, 0.3))), float)


def test_phi_inverse_domain():
    with pytest.raises(DomainError):
        cir.phi_inverse(BASE, 0.0)
    with pytest.raises(DomainError):
        cir.phi_inverse(BASE, cir.phi_at_zero(BASE) * 1.01)
    with pytest.raises(BracketError):
        cir.phi_inverse(FELLER, float(cir.phi(FELLER, 1e-13)))
    assert cir.phi_inverse(BASE, cir.phi_at_zero(BASE)) == pytest.approx(0.0, abs=1e-12)


# kappa * y stays below ~600, inside the float range of F
params_st = st.builds(
    CirParams,
    mu=st.floats(0.05, 1.5), theta=st.floats(0.05, 0.6),
    sigma=st.floats(0.1, 0.6), r=st.floats(0.005, 0.2))


@settings(max_examples=50, deadline=None)
@given(p=params_st, y=st.floats(0.01, 2.0), dy=st.floats(1e-3, 0.5))
def test_monotonicity_properties(p, y, dy):
    assert cir.f_of(p, y) < cir.f_of(p, y + dy)
    assert cir.g_of(p, y) > cir.g_of(p, y + dy) > 0
    assert cir.phi(p, y) < cir.phi(p, y + dy) < 0
    assert cir.wronskian(p, y) > 0


@settings(max_examples=50, deadline=None)
@given(p=params_st, y=st.floats(0.01, 2.0))
def test_phi_inverse_property(p, y):
    try:
        z = cir.phi(p, y)
    except OverflowError:
        assume(False)
    assert cir.phi_inverse(p, z) == pytest.approx(y, rel=1e-8)
