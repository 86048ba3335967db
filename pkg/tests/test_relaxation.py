import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.integrate import quad

from finstop.errors import InputError
from finstop.ode_core import TimeGrid
from finstop.relaxation import (
    ControlFunction,
    classical_kernel,
    classical_rho,
    control_ell_bump,
    control_ell_poly,
    energy_monotone_check,
    power_law,
    tan_rate,
    tau_T_from,
    varrho_closed,
    varrho_n,
)

T = 5.0
# mpmath (30 digits) oracles for T = 5
ELL2_AT_2_5 = 0.024054530130643409
BUMP_DENOMINATOR = 29.185490634821626
VARRHO_INF = {1.0: 0.34658759904346266, 2.5: 0.055257290293264017, 4.0: 0.0016932040089151417,
              4.9: 3.7445380983140185e-15}
VARRHO_5_AT_2 = 0.029572643002251065
# -varrho_1 / varrho_1' at t = 4.999
TAU_T_NEAR_END = 0.00049991666666805556


def test_classical_rho():
    assert classical_rho(1.0)(1.0) == pytest.approx(math.exp(-1))
    assert classical_rho(1.0)(0.0) == 1.0
    assert classical_rho(lambda s: 1.0 + s)(1.0) == pytest.approx(0.5, rel=1e-9)


def test_poly_control_denominators():
    ell = control_ell_poly(1, T)
    assert ell.denominator == pytest.approx(math.exp(5) - 6, rel=1e-13)
    assert control_ell_poly(2, T).value(2.5) == pytest.approx(ELL2_AT_2_5, rel=1e-12)
    assert control_ell_poly(2, T).denominator == pytest.approx(2 * math.exp(5) - 37, rel=1e-13)
    for n in (1, 2, 5):
        c = control_ell_poly(n, T)
        assert c.value(T) == 0.0 and c.value(T + 1) == 0.0 and c.value(-0.1) == 0.0


def test_bump_control():
    ell = control_ell_bump(T)
    assert ell.denominator == pytest.approx(BUMP_DENOMINATOR, rel=1e-12)
    assert ell.value(0.0) == pytest.approx(1 / BUMP_DENOMINATOR, rel=1e-12)
    assert ell.value(T) == 0.0
    assert ell.normalization_error() < 1e-12


def test_control_rejects_bad_input():
    with pytest.raises(InputError):
        control_ell_poly(0, T)
    with pytest.raises(InputError):
        control_ell_poly(1, -1.0)
    with pytest.raises(InputError):
        control_ell_bump(0.0)


def test_zero_control_has_no_support_end():
    z = ControlFunction.zero()
    assert z.T == math.inf and z.normalization_error() == 0.0
    assert z.value(3.0) == 0.0


@pytest.mark.parametrize("n", [1, 2, 3, math.inf])
def test_kernels_start_at_one_and_stop(n):
    k = varrho_n(n, T)
    assert k.value(0.0) == pytest.approx(1.0, abs=1e-15)
    t = np.linspace(T, 2 * T, 50)
    assert np.all(k.value(t) == 0.0)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_derivatives_vanish_at_the_end(n):
    k = varrho_n(n, T)
    for delta in (1e-2, 1e-3):
        assert abs(k.deriv(T - delta)) < 10 * delta ** (n - 1)
    if n > 2:
        assert abs(k.deriv2(T - 1e-3)) < 1e-4


def test_incomplete_gamma_kernel_matches_quadrature():
    assert varrho_n(5, T).value(2.0) == pytest.approx(VARRHO_5_AT_2, rel=1e-12)
    assert varrho_n(1, T).value(2.0) == pytest.approx(varrho_closed(1, T).value(2.0), rel=1e-12)


def test_bump_kernel_matches_frozen_values():
    k = varrho_n(math.inf, T)
    for t, v in VARRHO_INF.items():
        assert k.value(t) == pytest.approx(v, rel=1e-10)


def test_closed_form_value():
    assert varrho_closed(1, T).value(2.5) == pytest.approx((math.exp(2.5) + 2.5 - 6) / (math.exp(5) - 6), rel=1e-14)
    assert varrho_closed(1, T).value(T) == 0.0
    # the rate behaves like 2 / (T - t), so the relaxation time goes to 0
    rate = varrho_closed(1, T).rate_function()
    for d in (1e-3, 1e-6):
        assert rate.a(T - d) * d == pytest.approx(2.0, rel=1e-3)
    with pytest.raises(InputError):
        varrho_closed(3, T)


def test_short_horizon_warns():
    with pytest.warns(UserWarning):
        varrho_n(1, 0.5)


def test_tau_T_without_control_is_tau():
    rate = tau_T_from(ControlFunction.zero(), 1.5, math.inf)
    assert rate.tau(np.array([0.3, 2.0])) == pytest.approx([1.5, 1.5])


def test_tau_T_endpoints():
    ell = control_ell_poly(1, T)
    rate = tau_T_from(ell, 1.0, T)
    assert rate.tau(0.0) == pytest.approx(1.0 / (1.0 + ell.value(0.0)), rel=1e-10)
    assert rate.tau(T - 1e-3) == pytest.approx(TAU_T_NEAR_END, rel=1e-8)


def test_tau_T_rejects_mismatched_support():
    with pytest.raises(InputError):
        tau_T_from(control_ell_poly(1, T), 1.0, 4.0)


def test_power_law():
    k = power_law(1.0, T)
    assert k.value(2.5) == pytest.approx(0.03125, rel=1e-14)
    assert power_law(1 / T, T).endpoint_slope == pytest.approx(-1 / T)
    assert power_law(2 / T, T).endpoint_slope == 0.0
    assert power_law(0.5 / T, T).endpoint_slope == -math.inf
    assert k.value(T) == 0.0


def test_tan_rate_flag():
    b0 = math.pi / (2 * T)
    assert tan_rate(math.sqrt(b0 * b0), b0, T)[1]
    assert not tan_rate(1.0, 0.0, T)[1]
    rate, valid = tan_rate(1.0, 1.0, T)
    assert valid and energy_monotone_check(rate, TimeGrid(0.0, T, 1e-3)).passes


def test_energy_check_basic_cases():
    grid = TimeGrid(0.0, T, 1e-3)
    const = classical_kernel(0.5).rate_function()
    rep = energy_monotone_check(const, grid)
    assert rep.passes and rep.min_margin == pytest.approx(4.0)
    assert not energy_monotone_check(power_law(0.5 / T, T).rate_function(), grid).passes
    assert energy_monotone_check(varrho_closed(1, T).rate_function(), grid).passes


@pytest.mark.parametrize("n", [1, 2])
def test_rate_matches_closed_form(n):
    t = np.linspace(0.01, 4.9, 200)
    a, b = varrho_n(n, T).rate_function(), varrho_closed(n, T).rate_function()
    np.testing.assert_allclose(a.a(t), b.a(t), rtol=1e-11)
    np.testing.assert_allclose(a.da(t), b.da(t), rtol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(1.0, 10.0), st.floats(0.3, 3.0))
def test_normalization_property(n, T_, tau0):
    ell = control_ell_poly(n, T_, tau0)
    exact = quad(lambda s: math.exp(s / tau0) * ell.value(s), 0, T_, epsabs=0, epsrel=1e-13)[0]
    assert abs(exact - 1.0) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.one_of(st.integers(1, 6), st.just(math.inf)), st.floats(2.0, 8.0))
def test_decreasing_and_convex(n, T_):
    k = varrho_n(n, T_)
    t = np.linspace(0.0, T_, 801)[1:-1]
    v = k.value(t)
    assert np.all(np.diff(v) <= 1e-15)
    assert np.all(np.diff(v, 2) >= -1e-15)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1, 2]), st.floats(0.01, 4.99))
def test_closed_form_consistency(n, t):
    assert varrho_n(n, T).value(t) == pytest.approx(varrho_closed(n, T).value(t), rel=1e-10, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([1, 2, 3]), st.floats(0.05, 4.95))
def test_tau_T_matches_kernel_ratio(n, t):
    k = varrho_n(n, T)
    rate = tau_T_from(control_ell_poly(n, T), 1.0, T)
    assert rate.tau(t) == pytest.approx(-k.value(t) / k.deriv(t), rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 3.0))
def test_energy_check_matches_sampled_energy(muT):
    assume(abs(muT - 1.0) > 0.02)
    k = power_law(muT / T, T)
    grid = TimeGrid(0.0, T, 1e-3)
    t = grid.nodes[1:-1]
    E = 0.5 * k.deriv(t) ** 2
    nonincreasing = bool(np.all(np.diff(E) <= 1e-12 * np.maximum(1.0, E[1:])))
    assert energy_monotone_check(k.rate_function(), grid).passes == nonincreasing
