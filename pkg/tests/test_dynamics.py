import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from myeloma_opt.dynamics import (
    ModelParameters,
    PatientState,
    PharmacodynamicsParameters,
    ValidationError,
    emax,
    jacobian_dose,
    jacobian_state,
    rhs_controlled,
    rhs_uncontrolled,
)

import oracles

IC = (4.0, 464.0, 227.0, 42.0)
# 30-digit evaluation of the transcribed equations (tests/oracles.py)
UNTREATED_AT_IC = [0.00793510630514895, 2.017279999999999, 1.343124804661634, 0.3731249999999996]
TREATED_POM_MAX_AT_IC = [-0.03077018583043174, 3.072879999999999, 4.254843473270649, 0.3731249999999996]


def test_emax_examples():
    assert emax(0.0, 0.5, 40.986) == 0.0
    for psi in (0.7065, 19.0, 40.986):
        assert emax(psi, 0.5, psi) == pytest.approx(0.25, rel=1e-15)
    assert emax(204.93, 0.5, 40.986) == pytest.approx(0.5 * 204.93 / 245.916, rel=1e-15)
    assert emax(204.93, 0.5, 40.986) == pytest.approx(0.416666, abs=1e-6)


@pytest.mark.parametrize("u,psi", [(-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
def test_emax_domain_errors(u, psi):
    with pytest.raises(ValidationError):
        emax(u, 0.5, psi)


@given(u=st.floats(0, 1e6), phi=st.floats(0, 1), psi=st.floats(1e-3, 1e4))
def test_emax_bounded(u, phi, psi):
    e = emax(u, phi, psi)
    assert 0.0 <= e <= phi
    if phi > 0 and u < 1e3 * psi:
        assert e < phi


def test_default_tables(params, pd):
    assert params.initial_state == PatientState(*IC)
    assert pd.phi == (0.5,) * 14
    assert pd.psi[:9] == (40.986,) * 9 and pd.psi[9:13] == (0.7065,) * 4 and pd.psi[13] == 19.0
    assert pd.u_max == (204.93, 3.5325, 95.0)
    assert params.as_array().shape == (31,)


def test_parameter_constraints():
    with pytest.raises(ValidationError, match="a_MM \\+ a_RM <= 1"):
        ModelParameters(a_MM=0.7, a_RM=0.5)
    with pytest.raises(ValidationError, match="non-negative"):
        ModelParameters(r_M=-0.1)
    with pytest.raises(ValidationError, match="carrying capacity"):
        ModelParameters(K_R=0.0)
    with pytest.raises(ValidationError):
        PharmacodynamicsParameters(phi=(1.5,) + (0.5,) * 13)
    with pytest.raises(ValidationError):
        PharmacodynamicsParameters(psi=(0.0,) + (1.0,) * 13)
    with pytest.raises(ValidationError):
        PharmacodynamicsParameters(u_max=(1.0, 0.0, 1.0))


def test_rhs_untreated_matches_symbolic_oracle(params, pd):
    np.testing.assert_allclose(rhs_uncontrolled(IC, params), UNTREATED_AT_IC, rtol=1e-13)


def test_rhs_treated_matches_symbolic_oracle(params, pd):
    got = rhs_controlled(IC, (204.93, 0.0, 0.0), params, pd)
    np.testing.assert_allclose(got, TREATED_POM_MAX_AT_IC, rtol=1e-13)


def test_rhs_random_points_against_oracle(params, pd, rng):
    for _ in range(10):
        x = rng.uniform([0.01, 1, 1, 0.5], [10, 900, 500, 100])
        u = rng.uniform(0, 1, 3) * pd.u_max_array
        np.testing.assert_allclose(rhs_controlled(x, u, params, pd),
                                   oracles.treated_rates(params, pd, x, u), rtol=1e-11, atol=1e-13)
        np.testing.assert_allclose(rhs_uncontrolled(x, params),
                                   oracles.untreated_rates(params, pd, x), rtol=1e-11, atol=1e-13)


def test_zero_state_limit(params):
    r = rhs_uncontrolled((0.0, 0.0, 0.0, 0.0), params)
    assert r[0] == pytest.approx(0.001)
    assert r[1] == 0.0
    assert r[2] == pytest.approx(0.03)
    assert r[3] == 0.0


def test_treg_at_capacity_without_tumour(params):
    r = rhs_uncontrolled((0.0, 100.0, 100.0, params.K_R), params)
    assert r[3] == pytest.approx(-params.delta_R * params.K_R, rel=1e-15)


def test_degenerate_threshold_rejected():
    p = ModelParameters(b_MM=0.0, b_MC=0.0, b_MR=0.0)
    with pytest.raises(ValidationError, match="degenerate"):
        rhs_uncontrolled((0.0, 1.0, 1.0, 1.0), p)


def test_dose_bounds_enforced(params, pd):
    with pytest.raises(ValidationError):
        rhs_controlled(IC, (300.0, 0, 0), params, pd)
    with pytest.raises(ValidationError):
        rhs_controlled(IC, (-1.0, 0, 0), params, pd)


def test_zero_dose_reduction_exact(params, pd, rng):
    xs = rng.uniform([1e-3, 1e-3, 1e-3, 1e-3], [15, 1500, 650, 120], size=(1000, 4))
    for x in xs:
        a = rhs_controlled(x, (0.0, 0.0, 0.0), params, pd)
        b = rhs_uncontrolled(x, params)
        assert np.array_equal(a, b)


@pytest.mark.parametrize("drug", [0, 1, 2])
@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_dose_psi_scaling_invariance(params, pd, rng, drug, lam):
    q2 = pd.scaled(drug, lam)
    for _ in range(100):
        x = rng.uniform([1e-3, 1, 1, 1e-2], [15, 1500, 650, 120])
        u = rng.uniform(0, 1, 3) * pd.u_max_array
        u2 = u.copy()
        u2[drug] *= lam
        a = rhs_controlled(x, u, params, pd)
        b = rhs_controlled(x, u2, params, q2)
        # agreement to round-off in the Emax ratios
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * np.abs(x).max())


@pytest.mark.parametrize("lam", [0.25, 0.5, 2.0, 8.0])
def test_dose_psi_scaling_exact_for_powers_of_two(params, pd, rng, lam):
    # scaling by 2**k is exact in binary floating point, so the rates must be too
    for drug in range(3):
        q2 = pd.scaled(drug, lam)
        for _ in range(100):
            x = rng.uniform([1e-3, 1, 1, 1e-2], [15, 1500, 650, 120])
            u = rng.uniform(0, 1, 3) * pd.u_max_array
            u2 = u.copy()
            u2[drug] *= lam
            assert np.array_equal(rhs_controlled(x, u, params, pd), rhs_controlled(x, u2, params, q2))


def test_emax_factor_bounds_over_dose_box(params, pd, rng):
    """Drug-modified multiplicative factors stay within [1 - phi, 1 + phi]."""
    for _ in range(200):
        u = rng.uniform(0, 1, 3) * pd.u_max_array
        e = [emax(u[0] if i < 9 else (u[1] if i < 13 else u[2]), pd.phi[i], pd.psi[i]) for i in range(14)]
        for i in range(14):
            assert 1 - pd.phi[i] <= 1 - e[i] <= 1 and 1 <= 1 + e[i] <= 1 + pd.phi[i]
        # T_R proliferation is the purely multiplicative case
        x = rng.uniform([1e-3, 1, 1, 1], [15, 1500, 650, 79])
        base = rhs_uncontrolled(x, params)[3] + params.delta_R * x[3]
        treated = rhs_controlled(x, (0, u[1], 0), params, pd)[3] + params.delta_R * x[3]
        lo, hi = sorted([(1 - pd.phi[12]) * base, base])
        assert lo - 1e-12 <= treated <= hi + 1e-12


def test_jacobians_match_symbolic(params, pd, rng):
    for _ in range(5):
        x = rng.uniform([0.01, 1, 1, 0.5], [10, 900, 500, 100])
        u = rng.uniform(0, 1, 3) * pd.u_max_array
        np.testing.assert_allclose(jacobian_state(x, u, params, pd),
                                   oracles.eval_matrix(oracles.jac_state, params, pd, x, u),
                                   rtol=1e-10, atol=1e-14)
        np.testing.assert_allclose(jacobian_dose(x, u, params, pd),
                                   oracles.eval_matrix(oracles.jac_dose, params, pd, x, u),
                                   rtol=1e-10, atol=1e-14)


def test_jacobians_match_finite_differences(params, pd, rng):
    x = np.array([2.0, 300.0, 250.0, 30.0])
    u = np.array([60.0, 1.0, 40.0])
    J = jacobian_state(x, u, params, pd)
    for j in range(4):
        h = 1e-6 * max(1.0, x[j])
        e = np.zeros(4)
        e[j] = h
        fd = (rhs_controlled(x + e, u, params, pd) - rhs_controlled(x - e, u, params, pd)) / (2 * h)
        np.testing.assert_allclose(J[:, j], fd, rtol=1e-6, atol=1e-10)
    Ju = jacobian_dose(x, u, params, pd)
    for j in range(3):
        h = 1e-6 * pd.u_max[j]
        e = np.zeros(3)
        e[j] = h
        fd = (rhs_controlled(x, u + e, params, pd) - rhs_controlled(x, u - e, params, pd)) / (2 * h)
        np.testing.assert_allclose(Ju[:, j], fd, rtol=1e-6, atol=1e-10)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-6, 1e4), min_size=4, max_size=4),
       st.lists(st.floats(0, 1), min_size=3, max_size=3))
def test_rhs_finite_on_positive_orthant(x, frac):
    p = ModelParameters()
    q = PharmacodynamicsParameters()
    r = rhs_controlled(x, np.array(frac) * q.u_max_array, p, q)
    assert np.all(np.isfinite(r))
