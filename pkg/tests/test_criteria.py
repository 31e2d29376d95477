import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcrystal.criteria import (DecompositionSpec, beta_star, beta_star_rhs, beta_star_rhs_bz,
                               check_high_T_uniqueness, check_phase_transition, check_quantum_stabilization,
                               evaluate_criteria, phi_series, t_star, t_star_residual, theta_d, theta_d_bz,
                               watson_integral)
from qcrystal.errors import ModelError, PreconditionError
from qcrystal.model import DynamicalMatrix, ModelSpec, Potential

# frozen reference values (heat-kernel route, steps 0.1 and 0.2 agree to 1e-15)
THETA_3 = 0.6439537333814673
D_THETA_SQ = {3: 1.2440, 4: 1.1448, 5: 1.1029, 6: 1.0801, 7: 1.0657, 8: 1.0558, 9: 1.0485, 10: 1.0429}
# Watson's simple-cubic lattice Green function at the origin, from the literature
WATSON_SC = 0.50546201971732600605


def test_theta_3_frozen_value():
    assert theta_d(3).value == pytest.approx(THETA_3, rel=1e-14)


def test_theta_3_matches_zone_midpoint_rule():
    assert theta_d_bz(3, n=128) == pytest.approx(THETA_3, rel=1e-6)


def test_octant_integral_matches_full_zone():
    full = theta_d_bz(3, n=32, richardson=False)
    octant = theta_d_bz(3, n=32, octant=True, richardson=False)
    assert octant == pytest.approx(full, rel=1e-12)


def test_watson_integral_literature_value():
    assert watson_integral(3) == pytest.approx(WATSON_SC, rel=1e-13)


@pytest.mark.parametrize("d", sorted(D_THETA_SQ))
def test_d_theta_squared_frozen(d):
    th = theta_d(d).value
    assert d * th * th == pytest.approx(D_THETA_SQ[d], abs=6e-5)


def test_theta_d_decreasing_and_above_inverse_d():
    vals = {d: theta_d(d).value for d in range(3, 11)}
    for d in range(3, 11):
        assert vals[d] > 1.0 / d
        assert 1 < d * vals[d] ** 2 < 3
    for d in range(3, 10):
        assert vals[d + 1] < vals[d]
        assert (d + 1) * vals[d + 1] ** 2 < d * vals[d] ** 2


def test_theta_d_rejects_low_dimension():
    with pytest.raises(PreconditionError):
        theta_d(1)


def test_phi_series_closed_forms():
    assert phi_series([1.0], 0.3) == pytest.approx(12 * 0.3)
    assert phi_series([1.0, 1.0], 0.2) == pytest.approx(12 * 0.2 + 90 * 0.04)
    assert phi_series([1.0, 2.0], 0.0) == 0.0


def test_phi_series_callable_matches_list():
    coeffs = [0.5, 0.1, 0.01]
    f = lambda s: coeffs[s - 2] if s - 2 < len(coeffs) else 0.0
    assert phi_series(f, 0.3) == pytest.approx(phi_series(coeffs, 0.3), rel=1e-14)


@pytest.mark.parametrize("a,b1,b2", [(1.0, -1.0, 1.0), (2.0, -3.0, 0.5), (0.5, -0.3, 0.1)])
def test_t_star_quartic_closed_form(a, b1, b2):
    assert t_star(a, [b1, b2]) == pytest.approx(-(a + 2 * b1) / (12 * b2), rel=1e-12)


def test_t_star_one_twelfth():
    assert t_star(1.0, [-1.0, 1.0]) == pytest.approx(1.0 / 12.0, rel=1e-14)


def test_t_star_sextic_quadratic_formula():
    # 12 t + 90 t^2 = 1
    root = (-12 + math.sqrt(144 + 360)) / 180
    assert t_star(1.0, [-1.0, 1.0, 1.0]) == pytest.approx(root, rel=1e-13)


def test_t_star_preconditions():
    with pytest.raises(PreconditionError):
        t_star(1.0, [0.0, 1.0])
    with pytest.raises(PreconditionError):
        t_star(1.0, [-1.0, -1.0, 1.0])


@given(st.floats(0.2, 3.0), st.floats(-4.0, -1.2), st.floats(0.05, 2.0), st.floats(0.0, 0.5))
def test_t_star_residual_and_continuity(a, b1, b2, b3):
    coeffs = [b1, b2, b3]
    if not 2 * b1 < -a:
        return
    ts = t_star(a, coeffs)
    assert abs(t_star_residual(a, coeffs, ts)) < 1e-8
    ts2 = t_star(a, [b1, 1.01 * b2, b3])
    assert ts2 <= ts
    assert (ts - ts2) / ts <= 0.01 + 1e-9


def test_beta_star_rhs_decreasing_with_limit():
    betas = [0.25, 0.5, 1, 2, 4, 8, 32]
    vals = [beta_star_rhs(b, 3, 1.0, 0.5) for b in betas]
    assert all(v2 < v1 for v1, v2 in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(THETA_3 / math.sqrt(4.0), rel=1e-3)


@pytest.mark.parametrize("beta", [0.3, 1.0, 5.0])
def test_beta_star_rhs_matches_zone_rule(beta):
    assert beta_star_rhs(beta, 3, 1.0, 0.7) == pytest.approx(beta_star_rhs_bz(beta, 3, 1.0, 0.7), rel=1e-7)


def test_beta_star_self_consistent_and_decreasing_in_J():
    ts = 1.0 / 12.0
    thr = THETA_3**2 / (8 * ts**2)
    prev = math.inf
    for J in (2 * thr, 4 * thr, 8 * thr):
        bs = beta_star(3, 1.0, J, ts)
        assert abs(beta_star_rhs(bs, 3, 1.0, J, 0.05) - ts) < 1e-8
        assert bs < prev
        prev = bs


def test_beta_star_absent_below_threshold():
    with pytest.raises(PreconditionError):
        beta_star(3, 1.0, 1.0, 1.0 / 12.0)


def test_phase_transition_threshold_and_mass_limit():
    res = check_phase_transition(3, 1.0, 0.1, 1.0, [-1.0, 1.0])
    assert not res.predicted and res.beta_star is None
    res = check_phase_transition(3, 1.0, 2 * res.threshold, 1.0, [-1.0, 1.0])
    assert res.predicted and math.isfinite(res.beta_star)
    flags = [check_phase_transition(3, m, 10.0, 1.0, [-1.0, 1.0]).predicted for m in (1.0, 0.1, 0.01, 1e-3)]
    assert flags[0] and not flags[-1]


def test_phase_threshold_exceeds_stabilization_threshold():
    ts = t_star(1.0, [-1.0, 1.0])
    th = theta_d(3).value
    assert th**2 / (8 * ts**2) > 1 / (8 * 3 * ts**2)


def test_quantum_stabilization_cases():
    assert check_quantum_stabilization(1.0, 1.0, 0.9).holds
    assert not check_quantum_stabilization(1.0, 1.0, 1.0).holds  # strict
    res = check_quantum_stabilization(1.0, 1.0, 0.5, d=3, J=0.1, t_star_value=0.5)
    assert res.nn_threshold == pytest.approx(1 / 6)
    assert res.nn_holds


def test_high_temperature_uniqueness_cases():
    d0 = DecompositionSpec(0.5, 0.0)
    assert check_high_T_uniqueness(1.0, d0, 1e6, 1.4).holds_all_beta
    assert not check_high_T_uniqueness(1.0, d0, 0.1, 1.5).holds  # exact boundary
    dd = DecompositionSpec(0.5, 0.2)
    cut = math.log(1.5 / 1.0) / 0.2
    assert check_high_T_uniqueness(1.0, dd, 0.99 * cut, 1.0).holds
    assert not check_high_T_uniqueness(1.0, dd, 1.01 * cut, 1.0).holds
    assert not check_high_T_uniqueness(1.0, dd, 1e-9, 2.0).holds
    with pytest.raises(ModelError):
        DecompositionSpec(0.0, -1.0)
    with pytest.raises(ModelError):
        check_high_T_uniqueness(1.0, DecompositionSpec(-2.0), 1.0, 0.1)


@given(st.floats(0.1, 3.0), st.floats(-0.09, 3.0), st.floats(0.0, 2.0), st.floats(0.01, 50.0), st.floats(0.0, 6.0))
def test_high_temperature_uniqueness_matches_formula(a, b, delta, beta, jz):
    res = check_high_T_uniqueness(a, DecompositionSpec(b, delta), beta, jz)
    expected = jz * math.exp(beta * delta) < a + b if jz > 0 else a + b > 0
    assert res.holds == expected


def test_evaluate_criteria_reports_beta_star_when_predicted():
    spec = ModelSpec(3, 1.0, 1.0, 10.0, Potential((-1.0, 0.5)), DynamicalMatrix.nearest_neighbor(2.5))
    rep = evaluate_criteria(spec, DecompositionSpec(0.0, 0.5))
    assert rep.phase_transition_predicted and rep.beta_star is not None
    assert abs(rep.residuals["beta_star"]) < 1e-8
    assert rep.t_star == pytest.approx(1 / 6, rel=1e-14)
    d = rep.to_dict()
    assert set(d) >= {"theta_d", "beta_star", "delta_gap", "j_hat_zero"}
    low = evaluate_criteria(ModelSpec(3, 1.0, 1.0, 1.0, Potential((-1.0, 0.5)), DynamicalMatrix.nearest_neighbor(0.1)))
    assert not low.phase_transition_predicted and low.beta_star is None


def test_evaluate_criteria_rejects_invalid_model():
    spec = ModelSpec(3, 1.0, 1.0, 1.0, Potential(()), DynamicalMatrix.nearest_neighbor(1.0))
    with pytest.raises(ModelError):
        evaluate_criteria(spec)
