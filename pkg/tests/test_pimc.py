import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcrystal.errors import MissingObservableError, PreconditionError, SamplerDiagnosticError
from qcrystal.lattice import Box, ExactOracle, Observable, build_action, build_periodic_action, free_covariance
from qcrystal.model import DynamicalMatrix, ModelSpec, Potential
from qcrystal.pimc import (McParams, effective_sample_size, estimate_mean, estimate_order_parameter,
                           estimate_pair_correlation, estimate_ursell, monomial_key, pair_monomials, run_chains,
                           sample_chain, ursell_monomials)

QUARTIC = Potential((-0.5, 0.25))
FAST = McParams(n_sweeps=4000, n_burnin=500, n_chains=8, master_seed=11)


def _spec(d=1, J=0.0, potential=QUARTIC, beta=1.0):
    couplings = DynamicalMatrix.nearest_neighbor(J) if J else DynamicalMatrix.zero()
    return ModelSpec(d=d, mass=1.0, rigidity=1.0, beta=beta, potential=potential, couplings=couplings)


def _within(est, exact, k=3.0):
    return abs(est.value - exact) <= k * est.error


def _exact_ursell(oracle, pts):
    def m(points):
        return oracle.expectation(Observable.monomial(points))

    def c(p, q):
        return m([p, q]) - m([p]) * m([q])

    p1, p2, p3, p4 = pts
    return m(pts) - c(p1, p2) * c(p3, p4) - c(p1, p3) * c(p2, p4) - c(p1, p4) * c(p2, p3)


URSELL_PTS = [(0, 0), (1, 0), (0, 1), (1, 2)]


@pytest.fixture(scope="module")
def two_site():
    act = build_action(_spec(J=0.5), Box.cube((2,)), 3)
    keys = pair_monomials((0, 0), (1, 0)) + ursell_monomials(URSELL_PTS) + [monomial_key([(1, 1)] * 2)]
    stats = run_chains(act, McParams(n_sweeps=20000, n_burnin=1000, n_chains=8, master_seed=3), keys)
    return act, ExactOracle(act), stats


# --- reproducibility ------------------------------------------------------


def test_results_independent_of_thread_count():
    act = build_action(_spec(J=0.3), Box.cube((3,)), 4)
    a = run_chains(act, FAST, threads=1)
    b = run_chains(act, FAST, threads=4)
    for ca, cb in zip(a.chains, b.chains):
        assert np.array_equal(ca.sums, cb.sums)
        assert np.array_equal(ca.block_means, cb.block_means)
    assert estimate_mean(a, [(0, 0)]) == estimate_mean(b, [(0, 0)])


def test_different_seeds_give_different_chains():
    act = build_action(_spec(), Box.cube((1,)), 4)
    a = sample_chain(act, FAST, 0)
    b = sample_chain(act, McParams(n_sweeps=4000, n_burnin=500, master_seed=12), 0)
    assert not np.array_equal(a.chains[0].sums, b.chains[0].sums)


@settings(max_examples=10)
@given(st.permutations([0, 1, 2]))
def test_merge_associative_and_commutative(order):
    act = build_action(_spec(), Box.cube((1,)), 3)
    p = McParams(n_sweeps=400, n_burnin=50, master_seed=5)
    parts = [sample_chain(act, p, c) for c in range(3)]
    left = (parts[order[0]] | parts[order[1]]) | parts[order[2]]
    right = parts[order[0]] | (parts[order[1]] | parts[order[2]])
    ref = (parts[0] | parts[1]) | parts[2]
    for s in (left, right):
        assert [c.chain_index for c in s.chains] == [0, 1, 2]
        assert estimate_mean(s, [(0, 0), (0, 0)]) == estimate_mean(ref, [(0, 0), (0, 0)])


def test_merge_rejects_duplicate_chains_and_mismatched_layouts():
    act = build_action(_spec(), Box.cube((1,)), 3)
    p = McParams(n_sweeps=100, n_burnin=10)
    a = sample_chain(act, p, 0)
    with pytest.raises(PreconditionError):
        a | a
    other = sample_chain(act, p, 1, [monomial_key([(0, 1)])])
    with pytest.raises(PreconditionError):
        a | other


# --- oracle comparisons ---------------------------------------------------


def test_uncoupled_even_model_has_zero_mean():
    act = build_action(_spec(), Box.cube((2,)), 4)
    stats = run_chains(act, FAST)
    for site in range(2):
        assert _within(estimate_mean(stats, [(site, 0)]), 0.0)


def test_harmonic_second_moment_matches_free_covariance():
    act = build_action(_spec(potential=Potential(()), beta=2.0), Box.cube((1,)), 8)
    stats = run_chains(act, FAST)
    exact = free_covariance(1.0, 1.0, 2.0, 8)[0, 0]
    assert _within(estimate_mean(stats, [(0, 0), (0, 0)]), exact)
    assert _within(estimate_mean(stats, "x2_mean"), exact)


def test_two_site_correlation_matches_oracle(two_site):
    act, oracle, stats = two_site
    exact = oracle.expectation(Observable.monomial([(0, 0), (1, 0)]))
    assert _within(estimate_mean(stats, [(0, 0), (1, 0)]), exact)


def test_two_site_ursell_matches_oracle(two_site):
    act, oracle, stats = two_site
    est = estimate_ursell(stats, URSELL_PTS)
    assert _within(est, _exact_ursell(oracle, URSELL_PTS))


def test_statistical_contract_on_oracle_instance(two_site):
    act, oracle, stats = two_site
    monos = [k for k in stats.keys if not isinstance(k, str)]
    hits = [_within(estimate_mean(stats, k), oracle.expectation(Observable.monomial(k))) for k in monos]
    assert len(hits) >= 10
    assert sum(hits) / len(hits) >= 0.95


def test_pair_correlation_nonnegative_for_ferromagnet(two_site):
    act, oracle, stats = two_site
    est = estimate_pair_correlation(stats, 0, 1, 0, 0)
    assert est.value + 3 * est.error >= 0
    assert est.value > 0


def test_diagonal_pair_correlation_is_variance_without_coupling():
    act = build_action(_spec(), Box.cube((1,)), 4)
    stats = run_chains(act, FAST, pair_monomials((0, 1), (0, 1)))
    k = estimate_pair_correlation(stats, 0, 0, 1, 1)
    exact = ExactOracle(act).expectation(Observable.x(0, 1, 2))
    assert _within(k, exact)


def test_harmonic_ursell_vanishes():
    act = build_action(_spec(J=0.3, potential=Potential(())), Box.cube((2,)), 3)
    stats = run_chains(act, FAST, ursell_monomials(URSELL_PTS))
    assert _within(estimate_ursell(stats, URSELL_PTS), 0.0)


def test_convex_quartic_ursell_nonpositive():
    act = build_action(_spec(J=0.3, potential=Potential((0.2, 0.5))), Box.cube((2,)), 3)
    stats = run_chains(act, FAST, ursell_monomials(URSELL_PTS))
    est = estimate_ursell(stats, URSELL_PTS)
    assert est.value - 3 * est.error <= 0


def test_boundary_field_reduces_pair_correlation():
    spec = _spec(J=0.4, potential=Potential((0.2, 0.5)))
    box = Box.cube((2,), boundary="external")
    keys = pair_monomials((0, 0), (1, 0))
    k0 = estimate_pair_correlation(run_chains(build_action(spec, box, 3, {(-1,): 0.0, (2,): 0.0}), FAST, keys),
                                   0, 1, 0, 0)
    k1 = estimate_pair_correlation(run_chains(build_action(spec, box, 3, {(-1,): 2.0, (2,): 2.0}), FAST, keys),
                                   0, 1, 0, 0)
    assert k1.value <= k0.value + 3 * math.hypot(k0.error, k1.error)


CLUSTER = McParams(n_sweeps=6000, n_burnin=500, n_chains=8, master_seed=21, cluster_moves=2)


@pytest.mark.parametrize("J,h", [(0.5, 0.0), (0.5, 0.3), (-0.4, 0.2)])
def test_cluster_reflections_preserve_distribution(J, h):
    spec = _spec(J=J, potential=Potential((-1.0, 0.25), field=h))
    act = build_action(spec, Box.cube((2,)), 3)
    keys = pair_monomials((0, 0), (1, 2)) + [monomial_key([(0, 1)] * 2)]
    stats = run_chains(act, CLUSTER, keys)
    oracle = ExactOracle(act)
    for k in keys:
        assert _within(estimate_mean(stats, k), oracle.expectation(Observable.monomial(k)), 3.5), k


def test_cluster_reflections_with_boundary_field():
    spec = _spec(J=0.4, potential=Potential((-1.0, 0.25)))
    act = build_action(spec, Box.cube((2,), boundary="external"), 3, {(-1,): 0.8, (2,): -0.3})
    stats = run_chains(act, CLUSTER, [monomial_key([(0, 0)]), monomial_key([(1, 1)])])
    oracle = ExactOracle(act)
    for site, tau in ((0, 0), (1, 1)):
        assert _within(estimate_mean(stats, [(site, tau)]), oracle.expectation(Observable.x(site, tau)))
    assert stats.chains[0].acceptance == run_chains(act, CLUSTER, [], threads=1).chains[0].acceptance


# --- periodic boxes -------------------------------------------------------


def test_uncoupled_torus_order_parameter_is_site_variance_over_volume():
    spec = ModelSpec(2, 1.0, 1.0, 1.0, QUARTIC, DynamicalMatrix.nearest_neighbor(0.0))
    act = build_periodic_action(spec, 1, 4)
    stats = run_chains(act, FAST)
    x2 = ExactOracle(build_action(_spec(), Box.cube((1,)), 4)).expectation(Observable.x(0, 0, 2))
    assert _within(estimate_order_parameter(stats, act.box), x2 / 4)
    assert _within(estimate_order_parameter(stats, act.box, slice_average=False), x2 / 4)


def test_torus_means_agree_across_sites():
    spec = _spec(d=2, J=0.3, potential=Potential((-0.5, 0.25), field=0.4))
    act = build_periodic_action(spec, 1, 4)
    stats = run_chains(act, FAST, [monomial_key([(i, 0)]) for i in range(act.n_sites)])
    ests = [estimate_mean(stats, [(i, 0)]) for i in range(act.n_sites)]
    ref = ests[0]
    for e in ests[1:]:
        assert abs(e.value - ref.value) <= 3 * math.hypot(e.error, ref.error)
    assert ref.value > 0


def test_high_temperature_order_parameter_scales_with_volume():
    spec = _spec(d=2, J=0.2, beta=0.3)
    vals = {}
    for L in (2, 3):
        act = build_periodic_action(spec, L, 4)
        stats = run_chains(act, FAST, [])
        vals[L] = (len(act.box), estimate_order_parameter(stats, act.box))
    (n2, p2), (n3, p3) = vals[2], vals[3]
    assert p3.value < p2.value
    assert abs(n2 * p2.value - n3 * p3.value) <= 3 * math.hypot(n2 * p2.error, n3 * p3.error)


def test_order_parameter_requires_periodic_box():
    act = build_action(_spec(), Box.cube((2,)), 3)
    stats = run_chains(act, McParams(n_sweeps=200, n_burnin=10, n_chains=2))
    with pytest.raises(PreconditionError):
        estimate_order_parameter(stats, Box.cube((2,)))


# --- diagnostics ----------------------------------------------------------


def test_missing_observable_is_reported():
    act = build_action(_spec(), Box.cube((2,)), 3)
    stats = run_chains(act, McParams(n_sweeps=200, n_burnin=10, n_chains=2))
    with pytest.raises(MissingObservableError):
        estimate_pair_correlation(stats, 0, 1, 0, 2)
    with pytest.raises(MissingObservableError):
        estimate_ursell(stats, URSELL_PTS)


def test_bad_acceptance_raises_diagnostic():
    act = build_action(_spec(), Box.cube((1,)), 4)
    p = McParams(n_sweeps=500, n_burnin=0, proposal_width=(50.0, 50.0))
    with pytest.raises(SamplerDiagnosticError):
        sample_chain(act, p, 0)


def test_adapted_acceptance_near_target():
    act = build_action(_spec(J=0.3), Box.cube((2,)), 4)
    stats = run_chains(act, FAST)
    acc = stats.acceptance()
    assert np.all((acc >= 0.05) & (acc <= 0.95))
    assert np.all(np.abs(acc.mean(axis=0) - 0.4) < 0.1)


def test_parameter_validation():
    with pytest.raises(PreconditionError):
        McParams(n_sweeps=1, n_blocks=16)
    with pytest.raises(PreconditionError):
        McParams(update_mix=0.0)
    with pytest.raises(PreconditionError):
        McParams(proposal_width=(0.0, 1.0))
    with pytest.raises(PreconditionError):
        McParams(cluster_moves=-1)


def test_effective_sample_size_of_ar1():
    rng = np.random.default_rng(0)
    n, phi = 200_000, 0.8
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    expected = n * (1 - phi) / (1 + phi)
    assert effective_sample_size(x) == pytest.approx(expected, rel=0.1)
    assert effective_sample_size(rng.normal(size=n)) == pytest.approx(n, rel=0.1)
