import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from finstop.diffusion import (
    SpaceTimeGrid,
    control_coeffs,
    diffusion_control_L,
    front_radius_capped,
    front_radius_sqrt,
    generalized_gaussian,
    pde_residual,
    variable_diffusivity,
)
from finstop.errors import InputError, ResolutionError
from finstop.relaxation import (
    ControlFunction,
    classical_kernel,
    control_ell_bump,
    control_ell_poly,
    varrho_n,
)

# sqrt(pi) / int varrho_2(s^2) ds for T = 4 (mpmath)
N2_T4 = 1.1415788639237348
# G(1, 2) for varrho_2, T = 4 on the capped front with D0 = 1, t0 = 1
G2_AT_1_2 = 0.19597181445358719


def _field(n, T=4.0, D0=1.0, t0=1.0):
    kernel = varrho_n(n, T)
    ell = control_ell_bump(T) if n == math.inf else control_ell_poly(n, T)
    front = front_radius_capped(D0, t0, T)
    return kernel, ell, front, generalized_gaussian(kernel, front, T)


def test_sqrt_front():
    f = front_radius_sqrt(1.0, 1.0, 4.0)
    assert f.R(1.0) == pytest.approx(4.0)
    assert f.dR(1.0) == pytest.approx(2.0)
    assert f.dR(0.0) == math.inf and f.speed_unbounded


def test_capped_front_is_c1_and_bounded():
    f = front_radius_capped(1.0, 1.0, 4.0)
    assert not f.speed_unbounded and f.cap == pytest.approx(6.0)
    assert f.R(1.0 - 1e-9) == pytest.approx(f.R(1.0 + 1e-9), abs=1e-7)
    assert f.dR(1.0 - 1e-9) == pytest.approx(f.dR(1.0 + 1e-9), abs=1e-7)
    t = np.linspace(0, 10, 2001)
    assert np.max(f.dR(t)) <= f.cap + 1e-12
    assert f.R(0.0) == 0.0 and f.kinks == (1.0,)


def test_front_rejects_bad_input():
    with pytest.raises(InputError):
        front_radius_sqrt(0.0, 1.0, 1.0)
    with pytest.raises(InputError):
        front_radius_capped(1.0, -1.0, 1.0)


def test_classical_gaussian_value():
    fld = generalized_gaussian(classical_kernel(1.0), front_radius_sqrt(1.0, 1.0, 4.0), 4.0)
    assert fld.value(0.0, 1.0) == pytest.approx(1 / math.sqrt(4 * math.pi), rel=1e-12)
    x = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(fld.value(x, 2.0), np.exp(-x * x / 8) / math.sqrt(8 * math.pi), rtol=1e-12)
    assert not fld.finite_front


def test_classical_needs_scale():
    with pytest.raises(InputError):
        generalized_gaussian(classical_kernel(1.0), front_radius_sqrt(1.0, 1.0, 4.0))


def test_frozen_normalization_and_value():
    _, _, _, fld = _field(2)
    assert fld.N == pytest.approx(N2_T4, rel=1e-11)
    assert fld.value(1.0, 2.0) == pytest.approx(G2_AT_1_2, rel=1e-11)


@pytest.mark.parametrize("n", [1, 2, math.inf])
def test_mass_and_support(n):
    _, _, front, fld = _field(n)
    for t in (0.3, 1.0, 2.5):
        assert abs(fld.mass(t) - 1.0) < 1e-9
        R = front.R(t)
        x = np.array([R, R + 0.1, -R - 1.0])
        assert np.all(fld.value(x, t) == 0.0)
    assert fld.value(0.3, 0.0) == 0.0


def test_control_vanishes_outside_front():
    kernel, ell, front, fld = _field(2)
    ctl = diffusion_control_L(kernel, ell, front, 1.0, 1.0)
    R = front.R(1.5)
    assert np.all(ctl.L(np.array([R, R + 0.5, -R - 2]), 1.5) == 0.0)
    assert abs(ctl.L(0.3, 1.5)) > 0


def test_control_coeffs_zero_for_matched_sqrt_front():
    # the matched sqrt front makes the a0 factor R' - 2 T D0 / (tau0 R) vanish
    a0, _, a2 = control_coeffs(front_radius_sqrt(1.0, 1.0, 4.0), 1.0, 1.0, 4.0)
    x = np.linspace(-2, 2, 9)
    assert np.max(np.abs(a0(x, 1.3))) < 1e-15
    assert a2(0.0, 1.3) == 0.0


def test_classical_residual_is_second_order():
    fld = generalized_gaussian(classical_kernel(1.0), front_radius_sqrt(1.0, 1.0, 4.0), 4.0)
    ctl = diffusion_control_L(classical_kernel(1.0), ControlFunction.zero(), front_radius_sqrt(1.0, 1.0, 4.0),
                              1.0, 1.0, 4.0)
    rep = pde_residual(fld, ctl, 1.0, SpaceTimeGrid(-4, 4, 0.1, 0.5, 1.5, 0.05), 3)
    assert rep.order_estimate > 1.9 and rep.max_residual < 1e-4


@pytest.mark.parametrize("n", [1, 2])
def test_finite_front_residual_order(n):
    kernel, ell, front, fld = _field(n)
    ctl = diffusion_control_L(kernel, ell, front, 1.0, 1.0)
    rep = pde_residual(fld, ctl, 1.0, SpaceTimeGrid(-6, 6, 0.04, 0.5, 2.0, 0.01), 3)
    assert rep.order_estimate >= 1.8
    assert rep.one_sided_nodes > 0


def test_bump_residual_order():
    kernel, ell, front, fld = _field(math.inf)
    ctl = diffusion_control_L(kernel, ell, front, 1.0, 1.0)
    rep = pde_residual(fld, ctl, 1.0, SpaceTimeGrid(-4, 4, 0.05, 0.5, 0.8, 0.02), 3)
    assert rep.order_estimate >= 1.8


def test_mismatched_control_leaves_a_residual():
    kernel, _, front, fld = _field(2)
    wrong = diffusion_control_L(kernel, control_ell_poly(1, 4.0), front, 1.0, 1.0)
    rep = pde_residual(fld, wrong, 1.0, SpaceTimeGrid(-6, 6, 0.04, 0.5, 2.0, 0.01), 2)
    assert rep.max_residual > 1e-3 and rep.order_estimate < 0.5


def test_residual_input_errors():
    _, _, _, fld = _field(2)
    with pytest.raises(InputError):
        pde_residual(fld, None, 1.0, SpaceTimeGrid(-6, 6, 0.04, 0.05, 2.0, 0.01), 1)
    with pytest.raises(ResolutionError):
        pde_residual(fld, None, 1.0, SpaceTimeGrid(-6, 6, 1.0, 0.1, 2.0, 0.01), 1)
    with pytest.raises(InputError):
        SpaceTimeGrid(1, 0, 0.1, 0, 1, 0.1)


def test_variable_diffusivity_classical():
    rate = classical_kernel(1.0).rate_function()
    front = front_radius_sqrt(1.0, 1.0, 4.0)
    x = np.array([0.2, 1.0, 2.5])
    D = variable_diffusivity(rate, front, 4.0)
    np.testing.assert_allclose(D(x, 1.0), 1.0, rtol=1e-12)
    Q = variable_diffusivity(rate, front, 4.0, "quadratic")
    np.testing.assert_allclose(Q(x, 1.0), -1.0, rtol=1e-12)
    with pytest.raises(InputError):
        variable_diffusivity(rate, front, 4.0, "other")


def test_variable_diffusivity_solves_uncontrolled_equation():
    fld = generalized_gaussian(classical_kernel(1.0), front_radius_sqrt(1.0, 1.0, 4.0), 4.0)
    D = variable_diffusivity(classical_kernel(1.0).rate_function(), front_radius_sqrt(1.0, 1.0, 4.0), 4.0)
    rep = pde_residual(fld, None, 1.0, SpaceTimeGrid(-4, 4, 0.1, 0.5, 1.5, 0.05), 2, diffusivity=D)
    assert rep.order_estimate > 1.9


def test_derived_diffusivity_goes_negative_for_stopped_kernel():
    kernel, _, front, _ = _field(1)
    D = variable_diffusivity(kernel.rate_function(), front, 4.0)
    scan = D.scan(np.linspace(-3, 3, 61), np.linspace(0.5, 2.0, 16))
    assert not scan["nonnegative"] and scan["negative_count"] > 0
    assert D(10.0, 1.0) == 0.0


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([1, 2, 3]), st.floats(2.0, 6.0), st.floats(0.3, 3.0))
def test_mass_property(n, T, t):
    fld = generalized_gaussian(varrho_n(n, T), front_radius_capped(1.0, 1.0, T), T)
    assert abs(fld.mass(t) - 1.0) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.floats(2.0, 6.0), st.floats(0.1, 4.0), st.floats(-5, 5))
def test_field_is_even_and_nonnegative(T, t, x):
    fld = generalized_gaussian(varrho_n(2, T), front_radius_capped(1.0, 1.0, T), T)
    assert fld.value(x, t) >= 0.0
    assert fld.value(x, t) == fld.value(-x, t)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 8.0))
def test_capped_speed_bound(t):
    f = front_radius_capped(1.0, 1.0, 4.0)
    assert 0 < f.dR(t) <= f.cap
