import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasaki.comparison import (
    c_k,
    f_rie,
    f_rie_vec,
    f_sas,
    g_rie,
    g_sas,
    g_sas_vec,
    k_constants,
    one_minus_c_over_k,
    phi_scaled,
    s_k,
    sk_ck,
    t_minus_s_over_k,
)
from sasaki.errors import PoleError


def central(fn, r, h=1e-5):
    return (fn(r + h) - fn(r - h)) / (2 * h)


# --- documented values -------------------------------------------------------------


def test_f_rie_values():
    assert abs(f_rie(np.pi / 2, 1.0)) < 1e-14
    assert f_rie(1.0, -1.0) == pytest.approx(1.0 / math.tanh(1.0), rel=1e-12)
    assert f_rie(2.0, 0.0) == pytest.approx(0.5)


def test_f_sas_flat_values():
    assert f_sas(2.0, 0.0) == pytest.approx(2.0, rel=1e-14)
    assert f_sas(1.0, 0.0) == pytest.approx(4.0, rel=1e-14)


def test_f_sas_negative_k_matches_log_derivative():
    oracle = central(lambda r: math.log(abs(2 - 2 * math.cosh(r) + r * math.sinh(r))), 1.0)
    assert f_sas(1.0, -1.0) == pytest.approx(oracle, rel=1e-8)


def test_g_rie_values():
    assert g_rie(5.0, 0.0) == 0.0
    assert g_rie(np.pi / 2, 1.0) == pytest.approx(-1.0, rel=1e-12)
    assert g_rie(1.0, -4.0) == pytest.approx(2 * math.tanh(1.0), rel=1e-12)
    assert g_rie(1.0, -4.0) == pytest.approx(1.5232, abs=1e-4)


def test_g_sas_values():
    assert g_sas(3.0, 0.0) == pytest.approx(2.0, rel=1e-14)
    assert g_sas(2.0, 0.0) == pytest.approx(3.0, rel=1e-14)
    # independent closed form for k > 0
    r, k = 1.0, 1.0
    t = math.tan(math.sqrt(k) * r / 2)
    oracle = r * k * t / (2 * t - r * math.sqrt(k))
    assert g_sas(r, k) == pytest.approx(oracle, rel=1e-12)
    assert g_sas(r, k) == pytest.approx(5.8993, abs=1e-4)


def test_k_constants():
    K = k_constants(1.0, 0.0, 7.0, -3.0)
    assert (K.K1, K.K2) == (7.0, -3.0)
    K = k_constants(0.0, 1.0, 123.0, -9.0)
    assert (K.K1, K.K2) == (1.0, 0.25)
    K = k_constants(0.6, 1.0, 2.0, -1.0)
    assert K.K1 == pytest.approx(1.72) and K.K2 == pytest.approx(-0.11)


def test_trig_pair():
    p = sk_ck(1.0, 0.5)
    assert p.s == pytest.approx(math.sin(0.5)) and p.c == pytest.approx(math.cos(0.5))
    p = sk_ck(-4.0, 0.5)
    assert p.s == pytest.approx(math.sinh(1.0) / 2) and p.c == pytest.approx(math.cosh(1.0))
    with pytest.raises(ValueError):
        sk_ck(1.0, -1.0)


# --- poles and domain -------------------------------------------------------------------


@pytest.mark.parametrize(
    "fn,r,k",
    [(f_rie, np.pi, 1.0), (g_rie, np.pi, 1.0), (g_sas, 2 * np.pi, 1.0), (f_sas, 2 * np.pi, 1.0), (f_rie, 4.0, 1.0)],
)
def test_pole_errors(fn, r, k):
    with pytest.raises(PoleError):
        fn(r, k)


def test_vec_variants_return_nan():
    vals = f_rie_vec(np.array([1.0, np.pi, 4.0]), 1.0)
    assert np.isfinite(vals[0]) and np.isnan(vals[1]) and np.isnan(vals[2])
    assert np.isnan(g_sas_vec(7.0, 1.0))


def test_nonpositive_radius_rejected():
    with pytest.raises(ValueError):
        g_sas(0.0, 1.0)
    with pytest.raises(ValueError):
        f_rie(-1.0, 0.0)


# --- properties -------------------------------------------------------------------------

ks = st.floats(-3.0, 3.0)


@settings(max_examples=60, deadline=None)
@given(k=ks, t=st.floats(0.05, 2.0))
def test_s_derivative_is_c(k, t):
    h = 1e-5
    fd = (s_k(k, t + h) - s_k(k, t - h)) / (2 * h)
    assert fd == pytest.approx(c_k(k, t), rel=1e-6, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(k=st.floats(0.0, 4.0), frac=st.floats(0.01, 0.98))
def test_g_sas_nonnegative_and_below_flat(k, frac):
    rmax = min(2 * np.pi / math.sqrt(k), 10.0) if k > 0 else 10.0
    r = frac * rmax
    val = g_sas(r, k)
    assert val >= 0.0
    assert val <= 6.0 / r * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(k=st.floats(-4.0, -1e-3), r=st.floats(0.05, 5.0))
def test_g_sas_nonnegative_negative_k(k, r):
    assert g_sas(r, k) >= 0.0


@pytest.mark.parametrize("fn", [f_rie, f_sas, g_rie, g_sas])
@pytest.mark.parametrize("r", [0.1, 1.0, 3.0])
def test_continuity_through_zero(fn, r):
    v0 = fn(r, 0.0)
    assert abs(fn(r, 1e-9) - v0) <= 1e-6
    assert abs(fn(r, -1e-9) - v0) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(k=ks, t=st.floats(0.01, 2.0))
def test_entire_helpers(k, t):
    if abs(k) * t * t > 1e-2:
        assert one_minus_c_over_k(k, t) == pytest.approx((1 - c_k(k, t)) / k, rel=1e-8, abs=1e-12)
        assert t_minus_s_over_k(k, t) == pytest.approx((t - s_k(k, t)) / k, rel=1e-7, abs=1e-12)


@pytest.mark.parametrize("K1", [-2.0, 0.0, 1e-8, 1.5])
@pytest.mark.parametrize("eps_coef", [0.0, 0.3])
def test_phi_scaled_ode_and_constraint(K1, eps_coef):
    r = 1.3
    t = np.linspace(0, r, 4001)
    phi, dphi, ddphi = phi_scaled(t, r, K1, eps_coef)
    C = ddphi + K1 * phi
    assert np.ptp(C) < 1e-10 * max(1.0, abs(C[0]))
    assert phi[0] == 0.0
    from scipy.integrate import simpson

    assert simpson(phi, x=t) == pytest.approx(eps_coef * r * C[0], abs=1e-9)
