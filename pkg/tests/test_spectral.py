import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qcrystal.criteria import t_star
from qcrystal.errors import ModelError, PreconditionError, TruncationError
from qcrystal.model import Potential
from qcrystal.spectral import (SchrodingerProblem, low_variance, matsubara_two_point, solve_schrodinger,
                               spectral_gap, upp_correlator_integral)


def _solve(v=(), m=1.0, a=1.0, **kw):
    return solve_schrodinger(SchrodingerProblem.from_v(m, a, v, **kw))


def _oscillator_basis_levels(m, a, coeffs, n_basis=160, n=8):
    """Independent oracle: diagonalize in the harmonic-oscillator basis of (m, a)."""
    w = math.sqrt(a / m)
    k = np.arange(1, n_basis)
    X = np.diag(np.sqrt(k / (2 * m * w)), 1)
    X = X + X.T
    H = np.diag(w * (np.arange(n_basis) + 0.5))
    X2 = X @ X
    Xp = np.eye(n_basis)
    for c in coeffs:
        Xp = Xp @ X2
        H = H + c * Xp
    # only the low block is converged; the basis truncation spoils the top
    return np.linalg.eigvalsh(H)[:n]


@pytest.mark.parametrize("m,a", [(1.0, 1.0), (0.5, 2.0), (2.0, 0.7)])
def test_harmonic_levels(m, a):
    dec = _solve((), m, a)
    w = math.sqrt(a / m)
    exact = w * (np.arange(dec.n_keep) + 0.5)
    assert np.max(np.abs(dec.energies / exact - 1)) < 1e-6


def test_linear_v_shifts_rigidity():
    dec = _solve((1.0,), 1.0, 1.0)
    assert spectral_gap(dec).value == pytest.approx(math.sqrt(3.0), rel=1e-6)


def test_quartic_levels_match_oscillator_basis_oracle():
    dec = _solve((0.0, 1.0))
    ref = _oscillator_basis_levels(1.0, 1.0, (0.0, 1.0))
    assert np.allclose(dec.energies[:8], ref, rtol=1e-9)


def test_double_well_levels_match_oscillator_basis_oracle():
    dec = _solve((-1.0, 0.5))
    ref = _oscillator_basis_levels(1.0, 1.0, (-1.0, 0.5), n_basis=220)
    assert np.allclose(dec.energies[:8], ref, rtol=1e-8)


def test_energies_increase_and_vectors_orthonormal():
    dec = _solve((-1.0, 0.5))
    assert np.all(np.diff(dec.energies) > 0)
    V = dec.vectors[:, : dec.n_keep]
    assert np.max(np.abs(V.T @ V - np.eye(dec.n_keep))) < 1e-10
    assert np.all(dec.residuals() <= 1e-8 * np.maximum(1.0, np.abs(dec.energies)))


def test_quartic_gap_stable_under_grid_doubling():
    g200 = spectral_gap(_solve((0.0, 1.0), n_points=200)).value
    g400 = spectral_gap(_solve((0.0, 1.0), n_points=400)).value
    assert abs(g200 / g400 - 1) < 1e-6


def test_finite_differences_converge_at_second_order():
    exact = spectral_gap(_solve((0.0, 1.0))).value
    errs = [abs(spectral_gap(_solve((0.0, 1.0), n_points=n, method="fd", x_max=8.0)).value - exact)
            for n in (400, 800)]
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_gap_of_double_well_attained_at_first_level():
    gap = spectral_gap(_solve((-2.0, 0.5)))
    assert gap.index == 1
    assert not gap.at_truncation_edge


def test_gap_grows_as_mass_decreases():
    vals = [m * spectral_gap(_solve((0.0, 1.0), m=m)).value ** 2 for m in (1.0, 0.5, 0.25, 0.125)]
    assert all(b > a for a, b in zip(vals, vals[1:]))


def test_harmonic_correlator_equals_bound():
    for beta in (0.5, 1.0, 4.0):
        dec = _solve(())
        k = upp_correlator_integral(dec, beta)
        assert k == pytest.approx(1.0, rel=1e-8)


@given(st.floats(-1.5, 1.0), st.floats(0.1, 1.0), st.floats(0.3, 5.0))
def test_correlator_bounded_by_inverse_mass_gap_squared(b1, b2, beta):
    dec = _solve((b1, b2))
    gap = spectral_gap(dec).value
    assert upp_correlator_integral(dec, beta) <= 1.0 / gap**2 * (1 + 1e-10)


def test_correlator_converges_in_beta():
    dec = _solve((0.0, 1.0))
    vals = [upp_correlator_integral(dec, b) for b in (1, 2, 4, 8, 16)]
    diffs = np.abs(np.diff(vals))
    assert np.all(diffs[1:] < diffs[:-1])
    assert diffs[-1] < 1e-6


@pytest.mark.parametrize("m,a,beta", [(1.0, 1.0, 1.0), (0.5, 2.0, 3.0)])
def test_harmonic_variance_closed_form(m, a, beta):
    w = math.sqrt(a / m)
    exact = 1.0 / (2 * m * w) / math.tanh(beta * w / 2)
    assert low_variance(_solve((), m, a), beta) == pytest.approx(exact, rel=1e-8)


def test_double_well_variance_at_least_t_star():
    coeffs = (-2.0, 0.5)
    ts = t_star(1.0, coeffs)
    for beta in (0.5, 2.0, 10.0):
        assert low_variance(_solve(coeffs), beta) >= ts


def test_double_well_variance_converges_to_ground_state():
    dec = _solve((-2.0, 0.5))
    x2_gs = float(dec.vectors[:, 0] ** 2 @ dec.x**2)
    assert low_variance(dec, 64.0) == pytest.approx(low_variance(dec, 32.0), rel=1e-4)
    assert low_variance(dec, 64.0) == pytest.approx(x2_gs, rel=1e-4)


def test_matsubara_harmonic_closed_form():
    dec = _solve(())
    beta = 2.0
    tau = np.linspace(0, beta, 9)
    exact = np.cosh(beta / 2 - tau) / (2 * math.sinh(beta / 2))
    assert np.allclose(matsubara_two_point(dec, beta, tau), exact, rtol=1e-8)


@given(st.floats(-1.5, 1.0), st.floats(0.1, 1.0), st.floats(0.5, 4.0))
def test_matsubara_positive_symmetric_decreasing(b1, b2, beta):
    dec = _solve((b1, b2))
    tau = np.linspace(0, beta, 21)
    g = matsubara_two_point(dec, beta, tau)
    assert np.all(g > 0)
    assert np.allclose(g, g[::-1], rtol=1e-9)
    assert np.all(np.diff(g[:11]) <= 1e-12)
    assert g[0] == pytest.approx(low_variance(dec, beta), rel=1e-10)


def test_truncation_and_precondition_errors():
    dec = _solve(())
    with pytest.raises(PreconditionError):
        matsubara_two_point(dec, 1.0, 2.0)
    with pytest.raises(TruncationError):
        upp_correlator_integral(solve_schrodinger(SchrodingerProblem.from_v(1, 1, (), n_keep=10, n_points=60)), 0.01)
    with pytest.raises(TruncationError):
        solve_schrodinger(SchrodingerProblem.from_v(1, 1, (0.0, 1.0), x_max=1.0))
    with pytest.raises(ModelError):
        SchrodingerProblem(1.0, -3.0, Potential(()))
