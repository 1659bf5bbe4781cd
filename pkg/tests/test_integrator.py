import math

import numpy as np
import pytest

import oracles
from myeloma_opt.dynamics import ModelParameters, PatientState, PharmacodynamicsParameters
from myeloma_opt.integrator import (
    DIVERGED,
    N_AUG,
    DivergenceError,
    IntegrationError,
    IntegratorSettings,
    Trajectory,
    initial_augmented,
    integrate_segment,
    read_trajectory_csv,
    simulate,
    simulate_terminal,
    steady_state_check,
)
from myeloma_opt.objective import build_weights
from myeloma_opt.regimens import Constant, PiecewiseConstant, Sampled

P = ModelParameters()
Q = PharmacodynamicsParameters()
X0 = P.initial_state
ZERO = Constant((0.0, 0.0, 0.0))
MID = Constant((102.465, 1.7663, 90.0))

# scipy DOP853 at rtol = atol = 1e-12, zero dose, 181 days, from (4, 464, 227, 42)
UNTREATED_181 = np.array([4.834428822318718, 538.801374068503, 273.7088338066013, 47.345540829709805])


def test_untreated_endpoint_matches_frozen_oracle():
    ref = oracles.scipy_trajectory_endpoint(P, Q, X0.as_array(), lambda t: np.zeros(3), 181.0)
    np.testing.assert_allclose(ref[:4], UNTREATED_181, rtol=1e-9)
    tr = simulate(X0, ZERO, 181.0, P, Q)
    np.testing.assert_allclose(tr.states[-1], UNTREATED_181, rtol=1e-6)


def test_untreated_t_cells_settle():
    tr = simulate(X0, ZERO, 181.0, P, Q, dense=True)
    flags = steady_state_check(tr, 50.0, 0.01)
    assert flags["T_C"] and flags["T_R"]


def test_zero_horizon():
    tr = simulate(X0, MID, 0.0, P, Q)
    assert tr.times.tolist() == [0.0]
    np.testing.assert_array_equal(tr.states[0], X0.as_array())
    w = build_weights((1, 1, 1), 4.0, Q.u_max)
    assert tr.accumulated_integral(w)[-1] == 0.0


def test_negative_horizon_rejected():
    with pytest.raises(ValueError):
        simulate(X0, ZERO, -1.0, P, Q)


def test_nonpositive_initial_state_rejected():
    with pytest.raises(ValueError):
        initial_augmented(np.array([4.0, 0.0, 227.0, 42.0]))


def test_self_convergence():
    a = simulate(X0, MID, 360.0, P, Q, IntegratorSettings(rtol=1e-8, atol=1e-8))
    b = simulate(X0, MID, 360.0, P, Q, IntegratorSettings(rtol=1e-10, atol=1e-10))
    rel = np.abs(a.terminal_augmented - b.terminal_augmented) / np.abs(b.terminal_augmented)
    assert rel.max() < 1e-6


def test_matches_oracle_with_dose():
    u = np.array([153.6975, 0.8831, 90.0])
    ref = oracles.scipy_trajectory_endpoint(P, Q, X0.as_array(), lambda t: u, 360.0)
    y = simulate_terminal(X0, Constant(u), 360.0, P, Q)
    np.testing.assert_allclose(y[:5], ref, rtol=1e-7)


def test_fixed_step_order():
    # loose tolerances accept every step, so max_step fixes the step size
    u = MID.dose
    ref = oracles.scipy_trajectory_endpoint(P, Q, X0.as_array(), lambda t: u, 90.0)
    errs = []
    for h in (6.0, 3.0, 1.5):
        y = simulate_terminal(X0, MID, 90.0, P, Q, IntegratorSettings(rtol=1.0, atol=1.0, max_step=h))
        errs.append(np.abs(y[:4] - ref[:4]).max())
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) > 4.5, orders


def test_breakpoint_chaining():
    a, b = np.array([204.93, 3.5325, 0.0]), np.array([0.0, 0.8831, 90.0])
    tol = 1e-10
    s = IntegratorSettings(rtol=tol, atol=tol)
    whole = simulate_terminal(X0, PiecewiseConstant(90.0, [a, b]), 180.0, P, Q, s)
    first = simulate_terminal(X0, Constant(a), 90.0, P, Q, s)
    second = simulate_terminal(first[:4], Constant(b), 90.0, P, Q, s)
    chained = np.concatenate([second[:4], first[4:] + second[4:]])
    assert np.all(np.abs(whole - chained) <= 10 * (tol + tol * np.abs(whole)))


def test_extra_breakpoints_preserve_result():
    base = simulate_terminal(X0, MID, 360.0, P, Q)
    split = simulate_terminal(X0, MID, 360.0, P, Q, IntegratorSettings(breakpoints=(90.0, 180.0, 270.0)))
    np.testing.assert_allclose(base, split, rtol=1e-8)


def test_switch_times_in_output():
    reg = PiecewiseConstant(90.0, np.array([[0, 0, 0], [204.93, 0, 0], [0, 3.5325, 0], [0, 0, 95.0]]))
    tr = simulate(X0, reg, 360.0, P, Q)
    for t in (90.0, 180.0, 270.0, 360.0):
        assert t in tr.times
    k = int(np.searchsorted(tr.times, 90.0))
    np.testing.assert_array_equal(tr.doses[k], [204.93, 0, 0])


def test_augmented_integral_matches_quadrature():
    tol = 1e-10
    reg = PiecewiseConstant(90.0, np.array([[204.93, 3.5325, 90], [0, 0, 0], [102.465, 1.7663, 0], [51.2325, 0, 90]]))
    tr = simulate(X0, reg, 360.0, P, Q, IntegratorSettings(rtol=tol, atol=tol), dense=True)
    xg, wg = np.polynomial.legendre.leggauss(6)
    total = 0.0
    for t0, h in zip(tr.dense.t, tr.dense.h):
        ts = t0 + 0.5 * h * (xg + 1.0)
        total += 0.5 * h * np.dot(wg, tr.dense(ts)[:, 0])
    ref = tr.integrals[-1, 0]
    assert abs(total - ref) <= 10 * (tol + tol * abs(ref))


def test_dose_integrals_exact_for_piecewise():
    reg = PiecewiseConstant(90.0, np.array([[204.93, 3.5325, 90], [0, 0, 0], [102.465, 1.7663, 0], [51.2325, 0, 90]]))
    y = simulate_terminal(X0, reg, 360.0, P, Q)
    np.testing.assert_allclose(y[5:], 90.0 * reg.doses.sum(axis=0), rtol=1e-12)


def test_dense_output_hits_nodes():
    tr = simulate(X0, MID, 100.0, P, Q, dense=True)
    mid = len(tr.times) // 2
    np.testing.assert_allclose(tr.dense(tr.times[mid])[:4], tr.states[mid], rtol=1e-13)
    np.testing.assert_allclose(tr.dense(100.0)[:4], tr.states[-1], rtol=1e-13)


def test_positivity_random_regimens(rng):
    umax = np.array(Q.u_max)
    for _ in range(25):
        doses = rng.uniform(0, 1, (4, 3)) * umax
        tr = simulate(X0, PiecewiseConstant(90.0, doses), 360.0, P, Q)
        assert np.all(tr.states > 0)
    for _ in range(5):
        mesh = np.linspace(0, 360, 37)
        tr = simulate(X0, Sampled(mesh, rng.uniform(0, 1, (37, 3)) * umax), 360.0, P, Q)
        assert np.all(tr.states > 0)


def test_deterministic():
    reg = PiecewiseConstant(90.0, np.array([[204.93, 0, 90], [0, 3.5325, 0], [51.2325, 0.8831, 90], [0, 0, 0]]))
    a = simulate(X0, reg, 360.0, P, Q)
    b = simulate(X0, reg, 360.0, P, Q)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.integrals, b.integrals)


def test_terminal_equals_recorded():
    reg = PiecewiseConstant(90.0, np.array([[204.93, 0, 90], [0, 3.5325, 0], [51.2325, 0.8831, 90], [0, 0, 0]]))
    tr = simulate(X0, reg, 360.0, P, Q)
    np.testing.assert_array_equal(simulate_terminal(X0, reg, 360.0, P, Q), tr.terminal_augmented)


def test_max_steps_error_carries_time():
    with pytest.raises(IntegrationError) as info:
        simulate(X0, MID, 360.0, P, Q, IntegratorSettings(max_steps_per_segment=3))
    assert 0.0 < info.value.time < 360.0


def test_nonfinite_parameters_report_divergence():
    pa = P.as_array().copy()
    pa[1] = np.nan
    y = initial_augmented(X0)
    e = np.empty(0)
    status, _, t = integrate_segment(y, 0.0, 10.0, np.zeros(3), np.zeros(3), pa, Q.phi_array, Q.psi_array,
                                     1e-10, 1e-10, np.inf, 10000, False, e, e, np.empty((0, N_AUG)),
                                     np.empty((0, N_AUG, 4)), 0)
    assert status == DIVERGED
    assert t == 0.0


def test_divergence_error_is_integration_error():
    assert issubclass(DivergenceError, IntegrationError)


def _synthetic(times, states):
    n = len(times)
    return Trajectory(np.asarray(times, float), np.asarray(states, float), np.zeros((n, 4)), np.zeros((n, 3)))


def test_steady_state_constant():
    t = np.linspace(0, 100, 101)
    tr = _synthetic(t, np.tile([1.0, 2.0, 3.0, 4.0], (101, 1)))
    assert all(steady_state_check(tr, 50.0, 0.01).values())


def test_steady_state_exponential():
    t = np.linspace(0, 100, 101)
    tr = _synthetic(t, np.exp(0.05 * t)[:, None] * np.ones(4))
    assert not any(steady_state_check(tr, 50.0, 0.01).values())


def test_steady_state_window_too_long():
    tr = _synthetic([0.0, 10.0], np.ones((2, 4)))
    with pytest.raises(ValueError):
        steady_state_check(tr, 50.0, 0.01)


def test_csv_full_precision(tmp_path):
    tr = simulate(X0, MID, 30.0, P, Q)
    w = build_weights((1, 1, 1), 4.0, Q.u_max)
    path = tr.to_csv(tmp_path / "traj.csv", w)
    header = path.read_text().splitlines()[0]
    assert header == "t,M,T_C,N,T_R,u1,u2,u3,running_integral"
    data = read_trajectory_csv(path)
    np.testing.assert_array_equal(data["t"], tr.times)
    np.testing.assert_array_equal(data["T_C"], tr.states[:, 1])
    np.testing.assert_array_equal(data["running_integral"], tr.accumulated_integral(w))
    np.testing.assert_array_equal(data["u2"], np.full(tr.times.shape, 1.7663))


def test_final_state_type():
    tr = simulate(X0, MID, 10.0, P, Q)
    assert isinstance(tr.final_state, PatientState)
    assert tr.horizon == 10.0
