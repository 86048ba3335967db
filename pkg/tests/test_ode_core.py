import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp as scipy_solve_ivp

from finstop._quadrature import cumulative_simpson, simpson
from finstop.errors import ContractError, DegenerateAnsatzError, InputError
from finstop.ode_core import (
    ControlMatrix,
    MatrixFunction,
    TimeGrid,
    control_residual,
    forcing_control_residual,
    fundamental_solution,
    no_memory_deviation,
    scale_control_ansatz,
    semigroup_defect,
    solve_ivp,
    stopping_check,
)
from finstop.relaxation import control_ell_poly

# G(2) for G' = -[[0, t], [1, 0]] G, G(0) = I; mpmath odefun at 30 digits
NONCOMMUTING_G2 = np.array([[4.6762727878031468, -3.2595163616105248], [-3.6110737414484706, 2.730883017890146]])


def test_grid_is_extended_to_odd_node_count():
    g = TimeGrid(0.0, 1.0, 0.25)
    assert g.size % 2 == 1
    assert g.t_end == pytest.approx(1.0)
    g = TimeGrid(0.0, 0.9, 0.3)
    assert g.size == 5 and g.t_end == pytest.approx(1.2)


@pytest.mark.parametrize("args", [(0.0, 1.0, 0.0), (1.0, 1.0, 0.1), (0.0, 1.0, -0.1)])
def test_grid_rejects_bad_input(args):
    with pytest.raises(InputError):
        TimeGrid(*args)


def test_index_of_off_grid_time():
    with pytest.raises(InputError):
        TimeGrid(0.0, 1.0, 0.25).index_of(0.3)


def test_zero_generator_gives_identity():
    G = fundamental_solution(MatrixFunction.constant([[0.0]]), 0.0, TimeGrid(0.0, 3.0, 0.01))
    assert np.all(G.samples == 1.0)


def test_constant_scalar_generator_is_exponential():
    grid = TimeGrid(0.5, 3.5, 0.01)
    G = fundamental_solution(MatrixFunction.constant([[0.7]]), 0.5, grid)
    t = grid.nodes
    np.testing.assert_allclose(G.samples[:, 0, 0], np.exp(-0.7 * (t - 0.5)), rtol=1e-10)
    np.testing.assert_allclose(G.inverse_samples[:, 0, 0], np.exp(0.7 * (t - 0.5)), rtol=1e-10)


def test_noncommuting_generator_matches_frozen_oracle():
    A = MatrixFunction(2, lambda t: np.array([[0.0, t], [1.0, 0.0]]))
    G = fundamental_solution(A, 0.0, TimeGrid(0.0, 2.0, 1e-3))
    np.testing.assert_allclose(G.at(2.0), NONCOMMUTING_G2, atol=1e-8)
    for k in range(0, G.grid.size, 250):
        np.testing.assert_allclose(G.samples[k] @ G.inverse_samples[k], np.eye(2), atol=1e-10)


def test_noncommuting_generator_matches_fine_grid():
    A = MatrixFunction(2, lambda t: np.array([[0.0, t], [1.0, 0.0]]))
    coarse = fundamental_solution(A, 0.0, TimeGrid(0.0, 2.0, 1e-2))
    fine = fundamental_solution(A, 0.0, TimeGrid(0.0, 2.0, 1e-3))
    for t in (0.5, 1.0, 2.0):
        np.testing.assert_allclose(coarse.at(t), fine.at(t), atol=1e-8)


def test_integrator_converges_at_fourth_order():
    A = MatrixFunction(1, lambda t: np.array([[math.cos(t)]]))
    exact = math.exp(-math.sin(2.0))
    errs = [abs(fundamental_solution(A, 0.0, TimeGrid(0.0, 2.0, h)).at(2.0)[0, 0] - exact) for h in (0.1, 0.05)]
    assert 13 < errs[0] / errs[1] < 19


def test_simpson_converges_at_fourth_order():
    errs = []
    for n in (16, 32):
        x = np.linspace(0.0, 1.0, n + 1)
        errs.append(abs(simpson(np.exp(3 * x), 1.0 / n) - (math.exp(3) - 1) / 3))
    assert 14 < errs[0] / errs[1] < 18
    x = np.linspace(0.0, 1.0, 65)
    np.testing.assert_allclose(cumulative_simpson(np.cos(x), 1 / 64), np.sin(x), atol=1e-8)


def test_constant_solution():
    grid = TimeGrid(0.0, 2.0, 0.01)
    traj = solve_ivp(MatrixFunction.constant([[0.0]]), lambda t: 0.0, [1.0], 0.0, grid)
    assert np.all(traj.values == 1.0)


def _ramp(T=2.0):
    grid = TimeGrid(0.0, 2 * T, 0.01)
    rhs = lambda t: -1.0 / T if t <= T else 0.0
    return grid, rhs


def test_linear_ramp_stops():
    T = 2.0
    grid, rhs = _ramp(T)
    traj = solve_ivp(MatrixFunction.constant([[0.0]]), rhs, [1.0], 0.0, grid, breakpoints=(T,))
    t = grid.nodes
    np.testing.assert_allclose(traj.values[:, 0], np.clip(1 - t / T, 0, None), atol=1e-14)
    rep = stopping_check(traj, T, 1e-12)
    assert rep.passes and rep.max_abs_after_T < 1e-14


def test_controlled_relaxation_reaches_zero():
    T = 5.0
    ell = control_ell_poly(1, T)
    grid = TimeGrid(0.0, 8.0, 1e-3)
    traj = solve_ivp(MatrixFunction.constant([[1.0]]), lambda t: -ell.value(t), [1.0], 0.0, grid, breakpoints=(T,))
    assert abs(traj.values[grid.index_of(T), 0]) < 1e-6


def test_uncontrolled_decay_fails_stop_check():
    grid = TimeGrid(0.0, 8.0, 1e-3)
    traj = solve_ivp(MatrixFunction.constant([[1.0]]), lambda t: 0.0, [1.0], 0.0, grid)
    rep = stopping_check(traj, 5.0, 1e-8)
    assert not rep.passes
    assert rep.max_abs_after_T == pytest.approx(math.exp(-5.0), rel=1e-9)


def test_wrong_initial_shape():
    with pytest.raises(InputError):
        solve_ivp(MatrixFunction.constant([[1.0]]), lambda t: 0.0, [1.0, 2.0], 0.0, TimeGrid(0.0, 1.0, 0.1))


def test_control_residual_scalar_cases():
    T = 5.0
    grid = TimeGrid(0.0, 6.0, 1e-3)
    G = fundamental_solution(MatrixFunction.constant([[1.0]]), 0.0, grid)
    ell = control_ell_poly(1, T)
    r = control_residual(G, ControlMatrix(1, T, lambda t: [[ell.value(t)]]), T)
    assert abs(r[0, 0]) < 1e-10
    r0 = control_residual(G, ControlMatrix(1, T, lambda t: [[0.0]]), T)
    assert r0[0, 0] == 1.0


@pytest.mark.parametrize("m", [1, 2, 3])
def test_scale_ansatz_recovers_polynomial_control(m):
    T = 5.0
    grid = TimeGrid(0.0, 6.0, 1e-3)
    G = fundamental_solution(MatrixFunction.constant([[1.0]]), 0.0, grid)
    ctl = scale_control_ansatz(G, MatrixFunction(1, lambda t: [[(T - t) ** m]]), T)
    ref = control_ell_poly(m, T)
    for t in (0.0, 1.3, 4.0):
        assert ctl(t)[0, 0] == pytest.approx(ref.value(t), rel=1e-10)
    assert abs(control_residual(G, ctl, T)[0, 0]) < 1e-12


def test_scale_ansatz_uniform_and_degenerate():
    T = 2.0
    grid = TimeGrid(0.0, 3.0, 0.01)
    G = fundamental_solution(MatrixFunction.constant([[0.0]]), 0.0, grid)
    ctl = scale_control_ansatz(G, MatrixFunction(1, lambda t: [[1.0]]), T)
    assert ctl(1.0)[0, 0] == pytest.approx(1 / T, rel=1e-12)
    with pytest.raises(DegenerateAnsatzError):
        scale_control_ansatz(G, MatrixFunction(1, lambda t: [[0.0]]), T)


def test_forcing_control_residual():
    T = 3.0
    grid = TimeGrid(0.0, 5.0, 1e-2)
    G = fundamental_solution(MatrixFunction.constant([[1.0]]), 0.0, grid)
    f = lambda t: 1.0
    assert abs(forcing_control_residual(G, f, f, T)[0]) == 0.0
    z = lambda t: 0.0
    assert forcing_control_residual(G, z, z, T)[0] == 0.0
    # c = 1 is the root of (1 - c)(e^T - 1) = 0
    ellf = lambda t: 1.0 if t <= T else 1.0
    assert abs(forcing_control_residual(G, f, ellf, T)[0]) < 1e-10
    half = lambda t: 0.5
    assert forcing_control_residual(G, f, half, T, tail_tol=1.0)[0] == pytest.approx(0.5 * math.expm1(T), rel=1e-8)
    with pytest.raises(ContractError):
        forcing_control_residual(G, f, half, T)


def test_no_memory_cases():
    grid = TimeGrid(0.0, 2.0, 0.01)
    assert no_memory_deviation(MatrixFunction.constant([[0.0]]), lambda t: 0.0, [1.0], 0.0, 1.0, grid) == 0.0
    T = 2.0
    grid, rhs = _ramp(T)
    dev = no_memory_deviation(MatrixFunction.constant([[0.0]]), rhs, [1.0], 0.0, T / 2, grid, (T,))
    assert dev < 1e-13
    dev = no_memory_deviation(MatrixFunction.constant([[0.0]]), rhs, [1.0], 0.0, T, grid, (T,))
    assert dev < 1e-13


def test_no_memory_requires_later_restart():
    with pytest.raises(InputError):
        no_memory_deviation(MatrixFunction.constant([[0.0]]), lambda t: 0.0, [1.0], 1.0, 1.0, TimeGrid(1.0, 2.0, 0.1))


def test_scipy_cross_check_forced_system():
    A = MatrixFunction(2, lambda t: np.array([[0.3, t], [-1.0, 0.2]]))
    rhs = lambda t: np.array([math.sin(t), 1.0])
    grid = TimeGrid(0.0, 3.0, 1e-3)
    traj = solve_ivp(A, rhs, [1.0, -1.0], 0.0, grid)
    ref = scipy_solve_ivp(lambda t, u: rhs(t) - A(t) @ u, (0.0, 3.0), [1.0, -1.0], rtol=1e-12, atol=1e-13,
                          t_eval=[1.0, 3.0], method="DOP853")
    np.testing.assert_allclose(traj.values[grid.index_of(1.0)], ref.y[:, 0], atol=1e-9)
    np.testing.assert_allclose(traj.values[-1], ref.y[:, 1], atol=1e-9)


matrices = st.lists(st.floats(-2.0, 2.0), min_size=4, max_size=4)


@settings(max_examples=25, deadline=None)
@given(matrices, st.integers(0, 40), st.integers(0, 40))
def test_semigroup_property(entries, i, j):
    M = np.array(entries).reshape(2, 2)
    grid = TimeGrid(0.0, 2.0, 0.025)
    A = MatrixFunction(2, lambda t: M + np.array([[0.0, t], [0.0, 0.0]]))
    G = fundamental_solution(A, 0.0, grid)
    t1, t = sorted((grid.nodes[i * 2], grid.nodes[j * 2]))
    # integration error is amplified by the norms of G(t), G^-1(t1), G(t1)
    scale = np.linalg.norm(G.at(t)) * np.linalg.norm(G.inverse_at(t1)) * np.linalg.norm(G.at(t1))
    assert semigroup_defect(G, t, t1) <= 1e-8 * scale


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-2, 2), st.floats(0.1, 3.0), st.integers(1, 19))
def test_restart_property(a, u0, w, k):
    grid = TimeGrid(0.0, 2.0, 0.01)
    A = MatrixFunction.constant([[a]])
    dev = no_memory_deviation(A, lambda t: math.cos(w * t), [u0], 0.0, grid.nodes[10 * k], grid)
    assert dev <= 1e-11


@settings(max_examples=15, deadline=None)
@given(st.floats(0.2, 2.0), st.integers(1, 4), st.floats(1.0, 4.0))
def test_ansatz_controls_always_stop(a, m, T):
    T = round(T, 2)
    grid = TimeGrid(0.0, T + 0.5, 0.01)
    G = fundamental_solution(MatrixFunction.constant([[a]]), 0.0, grid)
    ctl = scale_control_ansatz(G, MatrixFunction(1, lambda t: [[(T - t) ** m]]), T)
    assert abs(control_residual(G, ctl, T)[0, 0]) < 1e-12
