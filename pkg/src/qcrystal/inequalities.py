"""Correlation-inequality checks on time-sliced ferromagnetic models.

Exact checks evaluate both sides with :class:`~qcrystal.lattice.ExactOracle`
and pass when the margin (the amount by which the inequality holds) is at
least ``-EXACT_TOL``. Monte Carlo checks pass unless the margin is below
minus three standard errors.

The trapezoid grid used by the oracle is a product of symmetric,
totally ordered node sets with positive weights, so the FKG and
Griffiths inequalities hold exactly for the discretized measure as well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .criteria import beta_star_rhs
from .errors import PreconditionError
from .lattice import Box, DiscreteAction, ExactOracle, Observable, QuadratureScheme, build_action
from .model import DynamicalMatrix, ModelSpec, Potential

__all__ = [
    "EXACT_TOL",
    "InequalityReport",
    "verify_fkg",
    "verify_gks",
    "verify_lebowitz",
    "verify_infrared_sanity",
    "pairings",
    "canonical_instances",
    "harmonic_instance",
    "antiferromagnetic_instance",
    "antiferromagnetic_meta_check",
    "random_instances",
    "run_suite",
    "suite_quadrature",
]

EXACT_TOL = 1e-9
SPOT_CHECKS = 64


@dataclass(frozen=True)
class InequalityReport:
    """Outcome of one inequality check.

    ``margin`` is the worst ``lhs - rhs`` over ``checks`` (oriented so that
    nonnegative means the inequality holds). ``status`` is one of
    ``"pass"``, ``"fail"``, ``"invalid-input"`` or ``"vacuous-pass"``.
    """

    name: str
    instance: str
    lhs: float
    rhs: float
    margin: float
    passed: bool
    tolerance: float
    method: str
    status: str
    error: float = 0.0
    checks: tuple = ()
    detail: str = ""

    def __bool__(self):
        return self.passed

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "instance": self.instance,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "method": self.method,
            "status": self.status,
            "error": self.error,
            "checks": [dict(label=c[0], lhs=c[1], rhs=c[2], margin=c[3]) for c in self.checks],
            "detail": self.detail,
        }


def _describe(action: DiscreteAction) -> str:
    return f"{action.n_sites} sites, P={action.P}, beta={action.beta:g}"


def _exact_report(name, action, checks, tol=EXACT_TOL, detail="") -> InequalityReport:
    checks = [(c[0], float(c[1]), float(c[2]), float(c[3])) for c in checks]
    worst = min(checks, key=lambda c: c[3])
    ok = bool(worst[3] >= -tol)
    return InequalityReport(name, _describe(action), worst[1], worst[2], worst[3], ok, tol, "exact",
                            "pass" if ok else "fail", 0.0, tuple(checks), detail)


def _invalid(name, action, reason) -> InequalityReport:
    nan = float("nan")
    return InequalityReport(name, _describe(action), nan, nan, nan, False, EXACT_TOL, "exact",
                            "invalid-input", detail=reason)


def _oracle(action, quad, oracle):
    if oracle is not None:
        if oracle.action is not action:
            raise PreconditionError("oracle was built for a different action")
        return oracle
    return ExactOracle(action, quad)


def _spot_check_increasing(action, f, rng, n_checks=SPOT_CHECKS) -> str | None:
    """Return a description of a monotonicity violation, if one is found."""
    n, P = action.n_sites, action.P
    for _ in range(n_checks):
        x = rng.normal(size=(n, P))
        i, t = rng.integers(n), rng.integers(P)
        y = x.copy()
        y[i, t] += rng.exponential()
        fx, fy = float(f(x)), float(f(y))
        if fy < fx - 1e-12 * max(1.0, abs(fx)):
            return f"decreases under a bump of x[{i},{t}]"
    return None


def verify_fkg(action: DiscreteAction, f, g, quad: QuadratureScheme | None = None, *,
               oracle: ExactOracle | None = None, seed: int = 0,
               check_precondition: bool = True) -> InequalityReport:
    """``<fg> - <f><g> >= 0`` for increasing ``f`` and ``g``.

    ``f`` and ``g`` must be :class:`Observable` instances so that the
    oracle can contract them. Both are spot-checked for monotonicity on
    random coordinate bumps; a failure is reported as invalid input.

    Raises
    ------
    PreconditionError
        For a non-ferromagnetic coupling, unless ``check_precondition``
        is false.
    """
    if check_precondition and not action.is_ferromagnetic:
        raise PreconditionError("FKG requires ferromagnetic couplings")
    if not (isinstance(f, Observable) and isinstance(g, Observable)):
        raise TypeError("f and g must be Observable instances")
    rng = np.random.default_rng(seed)
    for name, h in (("f", f), ("g", g)):
        bad = _spot_check_increasing(action, h, rng)
        if bad:
            return _invalid("fkg", action, f"{name} {bad}")
    o = _oracle(action, quad, oracle)
    fg, ef, eg = o.expectations([f * g, f, g])
    return _exact_report("fkg", action, [("cov(f,g)", fg, ef * eg, fg - ef * eg)])


def _check_gks_pre(action: DiscreteAction):
    if not action.is_ferromagnetic:
        raise PreconditionError("Griffiths inequalities require ferromagnetic couplings")
    if np.any(action.fields < 0) or np.any(action.boundary_field < 0):
        raise PreconditionError("Griffiths inequalities require nonnegative fields and boundary")


def _mono(points) -> Observable:
    return Observable.monomial(points)


def verify_gks(action: DiscreteAction, groups: Sequence[Sequence[tuple]], quad: QuadratureScheme | None = None,
               *, oracle: ExactOracle | None = None) -> InequalityReport:
    """First and second Griffiths inequalities for monomials.

    Each group is a list of ``(site, slice)`` factors defining a monomial.
    The first inequality is checked for every group, the second for every
    pair of groups.
    """
    _check_gks_pre(action)
    o = _oracle(action, quad, oracle)
    groups = [list(gp) for gp in groups]
    if not groups:
        raise PreconditionError("no monomials given")
    means = o.expectations([_mono(gp) for gp in groups])
    checks = [(f"<{gp}> >= 0", float(m), 0.0, float(m)) for gp, m in zip(groups, means)]
    for i, j in combinations(range(len(groups)), 2):
        ab = o.expectation(_mono(groups[i] + groups[j]))
        checks.append((f"<{groups[i]} {groups[j]}> >= product", ab, means[i] * means[j], ab - means[i] * means[j]))
    return _exact_report("gks", action, checks)


def pairings(items: Sequence) -> list:
    """All partitions of ``items`` (even length) into unordered pairs."""
    items = list(items)
    if not items:
        return [[]]
    if len(items) % 2:
        raise PreconditionError("pairings need an even number of points")
    first, rest = items[0], items[1:]
    out = []
    for k in range(len(rest)):
        others = rest[:k] + rest[k + 1 :]
        for p in pairings(others):
            out.append([(first, rest[k])] + p)
    return out


def _convex_on_halfline(coeffs) -> bool:
    """Whether ``v(t) = sum_s c_s t^s`` (``coeffs[s-1] = c_s``) is convex on ``t >= 0``."""
    c = np.concatenate([[0.0], np.asarray(coeffs, dtype=float)])
    v2 = np.polynomial.polynomial.polyder(c, 2)
    if v2.size == 0 or np.all(v2 == 0):
        return True
    pts = [0.0]
    crit = np.polynomial.polynomial.polyroots(np.polynomial.polynomial.polyder(v2)) if v2.size > 1 else []
    pts += [float(r.real) for r in np.atleast_1d(crit) if abs(r.imag) < 1e-12 and r.real > 0]
    vals = np.polynomial.polynomial.polyval(pts, v2)
    trimmed = np.trim_zeros(v2, "b")
    return bool(np.all(vals >= -1e-14) and trimmed[-1] >= 0)


def _check_lebowitz_pre(action: DiscreteAction):
    if not action.is_ferromagnetic:
        raise PreconditionError("Lebowitz inequalities require ferromagnetic couplings")
    if not action.is_even:
        raise PreconditionError("Lebowitz inequalities require zero field and zero boundary")
    for i in range(action.n_sites):
        if not _convex_on_halfline(action.even_coeffs[i]):
            raise PreconditionError(f"v is not convex in x^2 at site {i}")


def verify_lebowitz(action: DiscreteAction, tuples: Sequence[Sequence[tuple]], quad: QuadratureScheme | None = None,
                    *, oracle: ExactOracle | None = None) -> InequalityReport:
    """Gaussian domination of ``2n``-point moments and ``U <= 0`` for four points.

    For each tuple the moment is compared with the sum over pairings of
    products of two-point moments. Tuples of length four also check the
    Ursell function.
    """
    _check_lebowitz_pre(action)
    o = _oracle(action, quad, oracle)
    checks = []
    two_point = {}

    def pair(p, q):
        key = tuple(sorted((p, q)))
        if key not in two_point:
            two_point[key] = o.expectation(_mono([p, q]))
        return two_point[key]

    for tup in tuples:
        tup = [tuple(p) for p in tup]
        if len(tup) % 2 or not tup:
            raise PreconditionError("tuples must have positive even length")
        moment = o.expectation(_mono(tup))
        wick = sum(math.prod(pair(p, q) for p, q in pr) for pr in pairings(tup))
        checks.append((f"wick{tup}", wick, moment, wick - moment))
        if len(tup) == 4:
            p1, p2, p3, p4 = tup
            # zero field: first moments vanish, so the pair correlators are the raw moments
            u = moment - pair(p1, p2) * pair(p3, p4) - pair(p1, p3) * pair(p2, p4) - pair(p1, p4) * pair(p2, p3)
            checks.append((f"ursell{tup}", 0.0, u, -u))
    return _exact_report("lebowitz", action, checks)


def verify_infrared_sanity(d: int, mass: float, J: float, beta: float, x2, order_parameter,
                           t_star: float | None = None, *, instance: str = "") -> InequalityReport:
    """Check the infrared lower bound on the order parameter within Monte Carlo errors.

    ``x2`` and ``order_parameter`` are ``(value, error)`` pairs. The
    bound reads ``P >= <x^2> - R(beta)`` with ``R`` the zone integral of
    :func:`~qcrystal.criteria.beta_star_rhs`. A nonpositive right-hand
    side is reported as a vacuous pass. If ``t_star`` is given,
    ``<x^2> >= t_star`` is checked as well.
    """
    if J <= 0:
        raise PreconditionError("the infrared bound needs J > 0")
    xv, xe = (float(v) for v in x2)
    pv, pe = (float(v) for v in order_parameter)
    rhs = xv - beta_star_rhs(beta, d, mass, J)
    checks = [("P >= <x^2> - R", pv, rhs, pv - rhs)]
    sig = [math.hypot(pe, xe)]
    if t_star is not None:
        checks.append(("<x^2> >= t*", xv, float(t_star), xv - float(t_star)))
        sig.append(xe)
    passed = all(c[3] >= -3.0 * s for c, s in zip(checks, sig))
    if rhs <= 0 and (t_star is None or checks[1][3] >= -3.0 * sig[1]):
        status = "vacuous-pass"
    else:
        status = "pass" if passed else "fail"
    worst = min(range(len(checks)), key=lambda k: checks[k][3] / max(sig[k], 1e-300))
    c = checks[worst]
    return InequalityReport("infrared", instance or f"d={d}, beta={beta:g}", c[1], c[2], c[3], passed,
                            3.0 * sig[worst], "mc", status, sig[worst], tuple(checks))


# ---------------------------------------------------------------------------
# canonical instances


def _chain_action(n_sites, P, beta, coeffs, J=0.5, mass=1.0, rigidity=1.0):
    spec = ModelSpec(d=1, mass=mass, rigidity=rigidity, beta=beta, potential=Potential(tuple(coeffs)),
                     couplings=DynamicalMatrix.nearest_neighbor(J))
    return build_action(spec, Box.cube((n_sites,)), P)


QUARTIC = (-0.5, 0.25)
QUARTIC_SOFT = (0.0, 0.1)
SEXTIC = (-0.3, 0.1, 0.02)

_CANONICAL = [
    ("quartic-1site-P2", 1, 2, 1.0, QUARTIC, 0.5),
    ("quartic-1site-P4", 1, 4, 2.0, QUARTIC, 0.5),
    ("sextic-1site-P3", 1, 3, 1.5, SEXTIC, 0.5),
    ("quartic-2site-P2", 2, 2, 1.0, QUARTIC, 0.5),
    ("quartic-2site-P3", 2, 3, 1.0, QUARTIC, 0.5),
    ("soft-quartic-2site-P4", 2, 4, 2.0, QUARTIC_SOFT, 0.8),
    ("sextic-2site-P2", 2, 2, 1.0, SEXTIC, 0.7),
    ("sextic-2site-P4", 2, 4, 1.5, SEXTIC, 0.4),
    ("quartic-3site-P2", 3, 2, 2.0, QUARTIC, 0.3),
    ("quartic-3site-P3", 3, 3, 1.0, QUARTIC, 0.3),
    ("soft-quartic-3site-P2", 3, 2, 2.0, QUARTIC_SOFT, 0.3),
    ("soft-quartic-3site-P3", 3, 3, 2.0, QUARTIC_SOFT, 0.3),
]


def canonical_instances() -> list:
    """Twelve ``(name, action)`` pairs on 1-3 site chains with P in {2, 3, 4}."""
    return [(name, _chain_action(n, P, beta, c, J)) for name, n, P, beta, c, J in _CANONICAL]


def harmonic_instance() -> tuple:
    return "harmonic-2site-P3", _chain_action(2, 3, 1.0, (0.0,), 0.5)


def antiferromagnetic_instance() -> tuple:
    return "antiferro-2site-P2", _chain_action(2, 2, 1.0, QUARTIC, -0.5)


def random_instances(count: int, seed: int = 0) -> list:
    """``count`` seeded random ferromagnetic chains with potentials convex in ``x^2``.

    One or two sites, ``P`` in {2, 3}, quartic or sextic potentials with
    nonnegative higher coefficients, so every inequality of the suite
    applies.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        n = int(rng.integers(1, 3))
        P = int(rng.integers(2, 4))
        beta = float(rng.uniform(0.5, 2.0))
        J = float(rng.uniform(0.0, 0.8))
        coeffs = [float(rng.uniform(-1.0, 0.5)), float(rng.uniform(0.05, 0.5))]
        if rng.random() < 0.3:
            coeffs.append(float(rng.uniform(0.0, 0.05)))
        out.append((f"random-{k}", _chain_action(n, P, beta, coeffs, J)))
    return out


def antiferromagnetic_meta_check() -> InequalityReport:
    """FKG on the antiferromagnetic instance with the precondition disabled.

    ``f`` and ``g`` are the loop sums of the two sites, which the negative
    coupling anticorrelates, so a working harness reports a failure.
    """
    name, action = antiferromagnetic_instance()
    f = sum((Observable.x(0, t) for t in range(1, action.P)), Observable.x(0, 0))
    g = sum((Observable.x(1, t) for t in range(1, action.P)), Observable.x(1, 0))
    report = verify_fkg(action, f, g, suite_quadrature(action), check_precondition=False)
    return _rename(report, name)


# progressively coarser trapezoid grids, finest first
_RELAXATION = ((1e-18, 0.75), (1e-12, 0.9), (1e-10, 1.0), (1e-8, 1.2), (1e-7, 1.3), (1e-6, 1.5))


def suite_quadrature(action: DiscreteAction, max_states: int = 4096) -> QuadratureScheme:
    """Finest grid of the relaxation ladder whose joint state count fits ``max_states``.

    FKG and Griffiths inequalities hold exactly for every grid of the
    ladder. For the Lebowitz checks the coarsest rungs have quadrature
    errors near ``1e-7``, far below the margins of the suite instances.
    """
    for tail, factor in _RELAXATION:
        quad = QuadratureScheme.for_action(action, tail=tail, spacing_factor=factor)
        if quad.q ** action.n_sites <= max_states:
            return quad
    return quad


def _probe_sets(action: DiscreteAction):
    n, P = action.n_sites, action.P
    last = (n - 1, P - 1)
    mid = (n // 2, P // 2)
    singles = [(0, 0), last, mid]
    gks_groups = [[(0, 0)], [last], [(0, 0), mid], [mid, mid, last]]
    four = [[(0, 0), (0, 0), last, last], [(0, 0), mid, last, (0, P - 1)], [(0, 0)] * 4]
    six = [[(0, 0), (0, 0), mid, mid, last, last]]
    return singles, gks_groups, four + six


def run_suite(instances=None, field: float = 0.25, include_sextet: bool = True) -> list:
    """FKG, Griffiths and Lebowitz checks on each instance.

    Griffiths inequalities are checked at zero field and again with a
    uniform field ``field > 0`` on the same grid; the other two at zero
    field.
    """
    instances = canonical_instances() if instances is None else list(instances)
    reports = []
    for name, action in instances:
        quad = suite_quadrature(action)
        o = ExactOracle(action, quad)
        singles, groups, tuples = _probe_sets(action)
        if not include_sextet:
            tuples = [t for t in tuples if len(t) <= 4]
        total = Observable.total(action.n_sites, action.P)
        cube = Observable.x(*singles[1], power=3)
        for f, g in ((total, total), (Observable.x(*singles[0]), cube)):
            reports.append(_rename(verify_fkg(action, f, g, oracle=o), name))
        reports.append(_rename(verify_gks(action, groups, oracle=o), name))
        if field:
            tilted = action.with_field(field)
            reports.append(_rename(verify_gks(tilted, groups, quad), f"{name}+h"))
        reports.append(_rename(verify_lebowitz(action, tuples, oracle=o), name))
    return reports


def _rename(report: InequalityReport, instance: str) -> InequalityReport:
    from dataclasses import replace

    return replace(report, instance=instance)
