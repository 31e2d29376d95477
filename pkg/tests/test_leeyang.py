import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from qcrystal.errors import PreconditionError
from qcrystal.lattice import Box, ExactOracle, Observable, QuadratureScheme, build_action, direct_sum_expectation
from qcrystal.leeyang import (LaguerreCandidate, check_laguerre_condition, locate_partition_zeros,
                              partition_moments, potential_laguerre_condition, pressure_bounds, pressure_curve,
                              van_hove_pressure_check, zeros_from_moments)
from qcrystal.model import DynamicalMatrix, ModelSpec, Potential

QUARTIC = Potential((-0.5, 0.25))
DEEP = Potential((-1.0, 0.25))


def _spec(J=0.0, potential=QUARTIC, beta=1.0, d=1):
    couplings = DynamicalMatrix.nearest_neighbor(J) if J else DynamicalMatrix.zero()
    return ModelSpec(d=d, mass=1.0, rigidity=1.0, beta=beta, potential=potential, couplings=couplings)


def _cubic_u(a, b1, b2):
    # u(t) = t^3 + b2 t^2 + (b1 + a/2) t
    return [0.0, b1 + 0.5 * a, b2, 1.0]


# --- Laguerre condition ---------------------------------------------------


@given(st.floats(0.1, 3.0), st.floats(-3.0, 3.0), st.floats(-2.0, 2.0))
def test_cubic_condition_matches_closed_form(a, b1, b2):
    assume(abs(b2) > 1e-6 and abs(b1 + a / 2 - b2 * b2 / 3) > 1e-6)
    expected = b2 >= 0 and b1 + a / 2 <= b2 * b2 / 3
    assert check_laguerre_condition(_cubic_u(a, b1, b2)).holds == expected


def test_cubic_condition_on_coefficient_grid():
    a = 1.0
    for b1 in np.linspace(-2.05, 1.95, 10):
        for b2 in np.linspace(-1.55, 2.45, 10):
            expected = b2 >= 0 and b1 + a / 2 <= b2 * b2 / 3
            assert check_laguerre_condition(_cubic_u(a, b1, b2)).holds == expected


@pytest.mark.parametrize("alpha", [0.1, 1.0, 10.0])
def test_classical_counterexample_fails(alpha):
    res = check_laguerre_condition([0.0, alpha + 1.0, -2.0, 1.0])
    assert not res.holds


def test_monomial_witness():
    c = 0.7
    res = check_laguerre_condition([0.0, c, 1.0], b=-c)
    assert res.holds
    w = res.witness
    assert (w.phi0, w.gamma0, w.n, w.gammas) == (2.0, 0.0, 1, ())


def test_witness_reproduces_shifted_derivative():
    u = _cubic_u(1.0, -1.0, 1.5)
    res = check_laguerre_condition(u)
    assert res.holds
    p = np.polynomial.polynomial.polyder(u)
    p[0] += res.b
    assert np.allclose(res.witness.coefficients(), p, rtol=1e-10, atol=1e-12)
    assert np.all(res.witness.zeros() <= 0)


@given(st.floats(0.1, 3.0), st.floats(-3.0, 3.0), st.floats(-2.0, 2.0), st.integers(0, 2**32 - 1))
def test_condition_stable_under_tiny_perturbations(a, b1, b2, seed):
    assume(abs(b2) > 1e-6 and abs(b1 + a / 2 - b2 * b2 / 3) > 1e-6)
    u = np.array(_cubic_u(a, b1, b2))
    noise = np.random.default_rng(seed).uniform(-1e-10, 1e-10, size=3)
    u2 = u.copy()
    u2[1:] += noise
    assert check_laguerre_condition(u).holds == check_laguerre_condition(u2).holds


def test_degree_cap_and_offending_root():
    with pytest.raises(PreconditionError):
        check_laguerre_condition([0.0] * 10 + [1.0])
    res = check_laguerre_condition([0.0, 1.0, 0.0, 1.0], b=0.0)
    assert not res.holds and res.offending_root is not None and abs(res.offending_root.imag) > 0


def test_potential_condition_uses_half_rigidity():
    # v(t) = t^3 - t^2 - t/4 with a = 1: b1 + a/2 = 1/4 <= 1/3 but b2 < 0
    assert not potential_laguerre_condition(Potential((-0.25, -1.0, 1.0)), 1.0).holds
    assert potential_laguerre_condition(Potential((-0.25, 1.0, 1.0)), 1.0).holds


@given(st.floats(0.1, 5.0), st.floats(0.0, 2.0), st.lists(st.floats(0.01, 3.0), max_size=4), st.floats(0.0, 10.0))
def test_laguerre_candidate_positive_on_halfline(phi0, g0, gammas, t):
    cand = LaguerreCandidate(phi0, g0, 0, tuple(gammas))
    assert cand(t) > 0
    assert np.all(cand.zeros() <= 0)
    for z in cand.zeros():
        assert abs(cand(z)) <= 1e-9 * max(1.0, phi0)


# --- pressure -------------------------------------------------------------


H21 = np.linspace(-1.0, 1.0, 21)


@pytest.fixture(scope="module", params=[1, 2], ids=["1site", "2site"])
def curve(request):
    n = request.param
    return pressure_curve(_spec(J=0.5), Box.cube((n,)), 3, H21)


def test_pressure_even(curve):
    assert curve.evenness_defect() <= 1e-12


def test_pressure_convex(curve):
    assert curve.is_convex(1e-9)
    assert np.all(curve.second_differences() >= -1e-9)


def test_pressure_derivative_matches_magnetization(curve):
    d = curve.central_derivative()
    m = curve.magnetization[1:-1]
    h = H21[1] - H21[0]
    # central-difference error is (h^2 / 6) p'''; bound p''' via the grid
    third = np.max(np.abs(np.diff(curve.p, 3))) / h**3
    assert np.max(np.abs(d - m)) <= h * h * third / 6 * 1.5 + 1e-10
    fine = pressure_curve(_spec(J=0.5), curve.box, 3, np.linspace(-1, 1, 41))
    err_fine = np.max(np.abs(fine.central_derivative() - fine.magnetization[1:-1]))
    assert 3.0 < np.max(np.abs(d - m)) / err_fine < 5.0


def test_pressure_bounds_hold():
    b = pressure_bounds(_spec(J=0.4), Box.cube((2,)), 3)
    assert b.holds
    assert b.log_single < b.pressure < b.upper


def test_pressure_bounds_need_ferromagnet():
    with pytest.raises(PreconditionError):
        pressure_bounds(_spec(J=-0.4), Box.cube((2,)), 3)


def test_van_hove_monotone_and_bounded():
    quad = QuadratureScheme.uniform(3.0, 0.45)
    for boxes in ([(1,), (2,)], [(1,), (3,)]):
        rep = van_hove_pressure_check(_spec(J=0.4), boxes, 2, quad)
        assert rep.monotone
        assert all(e.increment > 0 for e in rep.entries)


def test_van_hove_identical_boxes_zero_difference():
    rep = van_hove_pressure_check(_spec(J=0.4), [(2,), (2,)], 3)
    assert rep.entries[0].increment == 0.0


def test_switching_on_coupling_raises_pressure():
    box = Box.cube((2,))
    p0 = pressure_curve(_spec(), box, 3, [0.0]).p[0]
    p1 = pressure_curve(_spec(J=0.5), box, 3, [0.0]).p[0]
    assert p1 > p0


# --- zeros ----------------------------------------------------------------


def test_moments_match_oracle():
    act = build_action(_spec(J=0.5), Box.cube((2,)), 3)
    o = ExactOracle(act)
    mu = partition_moments(o, 4)
    S = Observable.total(2, 3, act.epsilon)
    assert mu[0] == pytest.approx(1.0, rel=1e-12)
    assert abs(mu[1]) < 1e-12 and abs(mu[3]) < 1e-10
    assert mu[2] == pytest.approx(o.expectation(S * S), rel=1e-9)


def test_fourth_moment_matches_direct_summation():
    act = build_action(_spec(), Box.cube((1,)), 3)
    quad = QuadratureScheme.for_action(act)
    mu = partition_moments(ExactOracle(act, quad), 4)
    direct = direct_sum_expectation(act, lambda c: (act.epsilon * c.sum(axis=(-2, -1))) ** 4, quad)
    assert mu[4] == pytest.approx(direct, rel=1e-8)


def test_gaussian_moments_give_vacuous_consistency():
    rep = locate_partition_zeros(_spec(potential=Potential(())), Box.cube((1,)), 4, order=10)
    assert rep.classification == "consistent-vacuous"
    assert rep.in_radius.size == 0


@pytest.mark.parametrize("beta,P", [(1.0, 4), (2.0, 4), (1.0, 8)])
def test_single_site_quartic_zeros_real_negative(beta, P):
    spec = _spec(potential=DEEP, beta=beta)
    reps = [locate_partition_zeros(spec, Box.cube((1,)), P, order=k) for k in (10, 12)]
    for rep in reps:
        assert rep.classification == "consistent"
        assert np.all(rep.in_radius.real < 0)
        assert np.all(np.abs(rep.in_radius.imag) <= 1e-6 * np.abs(rep.in_radius))
    r10, r12 = reps[0].in_radius[0], reps[1].in_radius[0]
    assert r10.real == pytest.approx(r12.real, rel=1e-6)


def test_classification_invariant_under_rescaling():
    spec = _spec(potential=DEEP)
    base = locate_partition_zeros(spec, Box.cube((1,)), 4, order=10)
    scaled = locate_partition_zeros(spec, Box.cube((1,)), 4, order=10, s_scale=2.0)
    assert base.classification == scaled.classification
    assert np.allclose(scaled.roots, base.roots / 4.0, rtol=1e-8)


def test_zero_location_requires_even_potential():
    with pytest.raises(PreconditionError):
        locate_partition_zeros(_spec(potential=Potential((-0.5, 0.25), field=0.1)), Box.cube((1,)), 3)


def test_zeros_from_exponential_moments():
    # <S^2n> = (2n)! / n!  makes the series exactly exp(t)
    mu = [math.factorial(k) / math.factorial(k // 2) if k % 2 == 0 else 0.0 for k in range(25)]
    rep = zeros_from_moments(mu, 12, gaussian=True)
    assert rep.classification == "consistent-vacuous"
    rep = zeros_from_moments(mu, 12)
    assert rep.classification == "inconclusive"
