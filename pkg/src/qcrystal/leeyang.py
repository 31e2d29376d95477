"""Lee-Yang structure of time-sliced partition functions.

Three kinds of checks live here:

* the Laguerre condition on the derivative of a single-site polynomial
  ``u`` (whether ``b + u'`` has only real nonpositive zeros and a
  positive lowest coefficient),
* the finite-volume pressure ``p(h) = log Z(h) / |Lambda|`` on an
  ``h`` grid, with evenness, convexity and the interpolation bounds
  between nested boxes,
* zeros of truncated Taylor polynomials of ``Z`` as a function of
  ``t = h^2``.

Moments of ``S = eps * sum x`` are Taylor coefficients of the tilted
partition function, extracted by discrete Cauchy integrals on circles
placed near the saddle point of each coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, PreconditionError
from .lattice import Box, ExactOracle, Observable, QuadratureScheme, build_action
from .model import ModelSpec, Potential, j_hat_zero

__all__ = [
    "MAX_DEGREE",
    "LaguerreCandidate",
    "LaguerreResult",
    "check_laguerre_condition",
    "potential_laguerre_condition",
    "PressureCurve",
    "pressure_curve",
    "PressureBounds",
    "pressure_bounds",
    "ZeroReport",
    "partition_moments",
    "zeros_from_moments",
    "locate_partition_zeros",
    "VanHoveEntry",
    "VanHoveReport",
    "van_hove_pressure_check",
]

MAX_DEGREE = 8
_ROOT_TOL = 1e-7
_TRUST_REL = 1e-6


# ---------------------------------------------------------------------------
# Laguerre condition


@dataclass(frozen=True)
class LaguerreCandidate:
    """``phi0 * exp(gamma0 t) * t^n * prod(1 + gamma_i t)``."""

    phi0: float
    gamma0: float = 0.0
    n: int = 0
    gammas: tuple = ()

    def __post_init__(self):
        g = tuple(sorted((float(v) for v in self.gammas), reverse=True))
        if not self.phi0 > 0 or self.gamma0 < 0 or self.n < 0 or any(v < 0 for v in g):
            raise PreconditionError("need phi0 > 0 and nonnegative gamma0, n, gamma_i")
        if not math.isfinite(sum(g)):
            raise PreconditionError("gamma_i must have a finite sum")
        object.__setattr__(self, "gammas", g)

    def __call__(self, t):
        t = np.asarray(t, dtype=complex if np.iscomplexobj(t) else float)
        out = self.phi0 * np.exp(self.gamma0 * t) * t**self.n
        for g in self.gammas:
            out = out * (1.0 + g * t)
        return out

    def zeros(self) -> np.ndarray:
        z = [0.0] * self.n + [-1.0 / g for g in self.gammas if g > 0]
        return np.array(z)

    def coefficients(self) -> np.ndarray:
        """Ascending coefficients when ``gamma0 = 0`` (a polynomial)."""
        if self.gamma0:
            raise PreconditionError("not a polynomial")
        c = np.zeros(self.n + 1)
        c[-1] = self.phi0
        for g in self.gammas:
            c = np.polynomial.polynomial.polymul(c, [1.0, g])
        return c


@dataclass(frozen=True)
class LaguerreResult:
    holds: bool
    b: float
    witness: LaguerreCandidate | None
    offending_root: complex | None = None
    detail: str = ""

    def __bool__(self):
        return self.holds

    def to_dict(self) -> dict:
        w = self.witness
        return {
            "holds": self.holds,
            "b": self.b,
            "witness": None if w is None else {"phi0": w.phi0, "gamma0": w.gamma0, "n": w.n, "gammas": list(w.gammas)},
            "offending_root": None if self.offending_root is None
            else [self.offending_root.real, self.offending_root.imag],
            "detail": self.detail,
        }


def _as_poly(u) -> np.ndarray:
    if isinstance(u, np.polynomial.Polynomial):
        c = u.coef
    else:
        c = np.asarray(u, dtype=float)
    c = np.trim_zeros(np.asarray(c, dtype=float), "b")
    if c.size == 0:
        c = np.zeros(1)
    if not np.all(np.isfinite(c)):
        raise PreconditionError("polynomial coefficients must be finite")
    if c[0] != 0:
        raise PreconditionError("u must satisfy u(0) = 0")
    return c


def _quadratic_roots(c0, c1, c2):
    """Roots of ``c2 t^2 + c1 t + c0`` with a tolerant double-root test."""
    disc = c1 * c1 - 4.0 * c2 * c0
    scale = c1 * c1 + abs(4.0 * c2 * c0)
    if abs(disc) <= 1e-13 * scale:
        disc = 0.0
    if disc >= 0:
        s = math.sqrt(disc)
        # stable pairing of the two roots
        qv = -0.5 * (c1 + math.copysign(s, c1)) if c1 != 0 else -0.5 * s
        r1 = qv / c2 if qv != 0 else 0.0
        r2 = c0 / qv if qv != 0 else -r1
        if disc == 0.0:
            r1 = r2 = -c1 / (2.0 * c2)
        return np.array([r1, r2], dtype=complex)
    s = math.sqrt(-disc)
    return np.array([complex(-c1, s) / (2 * c2), complex(-c1, -s) / (2 * c2)])


def _roots(c: np.ndarray) -> np.ndarray:
    if c.size == 2:
        return np.array([-c[0] / c[1]], dtype=complex)
    if c.size == 3:
        return _quadratic_roots(*c)
    return np.roots(c[::-1]).astype(complex)


def _fixed_b(p: np.ndarray, b: float) -> LaguerreResult:
    c = np.array(p, dtype=float)
    c[0] += b
    c = np.trim_zeros(c, "b")
    if c.size == 0:
        return LaguerreResult(False, b, None, detail="b + u' vanishes identically")
    nz = np.nonzero(c)[0]
    n0 = int(nz[0])
    phi0 = float(c[n0])
    if phi0 <= 0:
        return LaguerreResult(False, b, None, detail="lowest coefficient is not positive")
    rest = c[n0:]
    roots = _roots(rest) if rest.size > 1 else np.array([], dtype=complex)
    gammas = []
    for r in roots:
        mag = max(1.0, abs(r))
        if abs(r.imag) > _ROOT_TOL * mag or r.real > _ROOT_TOL * mag:
            return LaguerreResult(False, b, None, complex(r), detail="root off the nonpositive real axis")
        gammas.append(0.0 if abs(r.real) <= _ROOT_TOL * mag else -1.0 / r.real)
    n_zero = n0 + sum(1 for g in gammas if g == 0.0)
    witness = LaguerreCandidate(phi0, 0.0, n_zero, tuple(g for g in gammas if g > 0))
    return LaguerreResult(True, b, witness)


def _crit_values(p: np.ndarray):
    """Values of ``p`` at its real local minima."""
    dp = np.polynomial.polynomial.polyder(p)
    if dp.size <= 1:
        return []
    crit = _roots(np.trim_zeros(dp, "b")) if np.trim_zeros(dp, "b").size > 1 else []
    d2 = np.polynomial.polynomial.polyder(dp)
    out = []
    for r in crit:
        if abs(r.imag) <= _ROOT_TOL * max(1.0, abs(r)):
            x = r.real
            curv = np.polynomial.polynomial.polyval(x, d2)
            if curv >= -1e-12:
                out.append(float(np.polynomial.polynomial.polyval(x, p)))
    return out


def check_laguerre_condition(u, b: float | None = None, *, b_min: float = 0.0) -> LaguerreResult:
    """Decide whether ``b + u'`` is a Laguerre polynomial.

    Parameters
    ----------
    u : sequence or numpy Polynomial
        Ascending coefficients of ``u`` with ``u(0) = 0``; degree at most
        ``MAX_DEGREE + 1``.
    b : float, optional
        Fixed shift. If omitted, a shift ``b >= b_min`` is searched for.
        With ``p = u'``, all roots of ``p + b`` are real only while ``-b``
        is at least the largest local minimum of ``p``, and raising ``b``
        moves the rightmost root left. The largest real-rooted shift is
        therefore the only candidate that needs testing.

    Returns
    -------
    LaguerreResult
        With the factored witness or the offending root.
    """
    c = _as_poly(u)
    p = np.polynomial.polynomial.polyder(c) if c.size > 1 else np.zeros(1)
    p = np.trim_zeros(p, "b") if np.any(p) else np.zeros(1)
    if p.size - 1 > MAX_DEGREE:
        raise PreconditionError(f"degree of u' above {MAX_DEGREE} is out of scope")
    if b is not None:
        return _fixed_b(p, float(b))
    if p[-1] < 0:
        return LaguerreResult(False, float(b_min), None, detail="negative leading coefficient")
    deg = p.size - 1
    if deg == 0:
        return _fixed_b(p, max(b_min, 1.0 - p[0]))
    if deg == 1:
        # the root -(b + p0)/p1 is nonpositive once b >= -p0
        return _fixed_b(p, max(b_min, -p[0]))
    minima = _crit_values(p)
    if not minima:
        return LaguerreResult(False, float(b_min), None, detail="u' has no real local minimum")
    cand = -max(minima)
    if cand < b_min:
        # any admissible shift would be below b_min; report the failure at b_min
        return _fixed_b(p, float(b_min))
    return _fixed_b(p, float(cand))


def potential_laguerre_condition(potential: Potential, rigidity: float) -> LaguerreResult:
    """Laguerre condition for ``u(t) = v(t) + a t / 2`` with ``V(x) = v(x^2) - h x``."""
    v = np.concatenate([[0.0], np.asarray(potential.even_coeffs, dtype=float)])
    u = v.copy()
    if u.size < 2:
        u = np.zeros(2)
    u[1] += 0.5 * rigidity
    return check_laguerre_condition(u)


# ---------------------------------------------------------------------------
# pressure


@dataclass(frozen=True, eq=False)
class PressureCurve:
    """``p(h) = log Z(h) / |Lambda|`` on a grid, with magnetization per site."""

    h: np.ndarray
    p: np.ndarray
    magnetization: np.ndarray
    box: Box
    P: int

    def second_differences(self) -> np.ndarray:
        """Divided second differences (non-uniform grids allowed)."""
        h, p = self.h, self.p
        d1 = np.diff(p) / np.diff(h)
        return 2.0 * np.diff(d1) / (h[2:] - h[:-2])

    def is_convex(self, tol: float = 1e-9) -> bool:
        return bool(np.all(self.second_differences() >= -tol))

    def evenness_defect(self) -> float:
        """Largest ``|p(h) - p(-h)|`` over grid points whose mirror is on the grid."""
        h, p = self.h, self.p
        lookup = {float(v): float(q) for v, q in zip(h, p)}
        gaps = [abs(q - lookup[-float(v)]) for v, q in zip(h, p) if -float(v) in lookup]
        return max(gaps) if gaps else float("nan")

    def central_derivative(self) -> np.ndarray:
        h, p = self.h, self.p
        return (p[2:] - p[:-2]) / (h[2:] - h[:-2])

    def rows(self):
        for h, p, m in zip(self.h, self.p, self.magnetization):
            yield float(h), float(p), float(m)


def _grid_quad(spec: ModelSpec, box: Box, P: int, h_grid, xi=None) -> QuadratureScheme:
    hmax = float(np.max(np.abs(h_grid))) if len(h_grid) else 0.0
    probe = build_action(_with_field(spec, hmax), box, P, xi)
    return QuadratureScheme.for_action(probe)


def _with_field(spec: ModelSpec, h: float) -> ModelSpec:
    from dataclasses import replace

    return replace(spec, potential=spec.potential.with_field(h), site_potentials=tuple(
        (site, pot.with_field(h)) for site, pot in spec.site_potentials))


def pressure_curve(spec: ModelSpec, box: Box, P: int, h_grid, quad: QuadratureScheme | None = None,
                   xi=None, max_states: int = 4096) -> PressureCurve:
    """Finite-volume pressure on ``h_grid`` from the exact oracle.

    All grid points share one quadrature (adapted to the largest ``|h|``)
    so that the curve is exactly even for even potentials. ``xi`` is an
    optional boundary configuration as accepted by
    :func:`~qcrystal.lattice.build_action`.
    """
    h_grid = np.asarray(h_grid, dtype=float)
    if h_grid.ndim != 1 or h_grid.size == 0 or not np.all(np.isfinite(h_grid)):
        raise PreconditionError("h_grid must be a nonempty finite 1-d array")
    quad = quad if quad is not None else _grid_quad(spec, box, P, h_grid, xi)
    n = len(box)
    p = np.empty(h_grid.size)
    mag = np.empty(h_grid.size)
    for k, h in enumerate(h_grid):
        action = build_action(_with_field(spec, float(h)), box, P, xi)
        o = ExactOracle(action, quad, max_states=max_states)
        p[k] = o.log_partition() / n
        mag[k] = o.expectation(Observable.total(n, P, action.epsilon)) / n
    return PressureCurve(h_grid, p, mag, box, P)


@dataclass(frozen=True)
class PressureBounds:
    """``log Y_1 <= p <= log Y_1 + g <= log Y_1 + J0 C / 2`` at one field value."""

    log_single: float
    pressure: float
    derivative_bound: float
    j_hat_zero: float
    loop_norm: float

    @property
    def upper(self) -> float:
        return self.log_single + 0.5 * self.j_hat_zero * self.loop_norm

    @property
    def holds(self) -> bool:
        tol = 1e-9
        return (self.log_single <= self.pressure + tol
                and self.pressure <= self.log_single + self.derivative_bound + tol
                and self.derivative_bound <= 0.5 * self.j_hat_zero * self.loop_norm + tol)


def _pair_overlaps(o: ExactOracle, pairs) -> dict:
    """``<(omega_l, omega_l')> = eps * sum_tau <x[l,tau] x[l',tau]>`` for each pair."""
    a = o.action
    out = {}
    for i, j in pairs:
        obs = Observable(tuple((a.epsilon, ((i, t, 1), (j, t, 1))) for t in range(a.P)))
        out[(i, j)] = o.expectation(obs)
    return out


def pressure_bounds(spec: ModelSpec, box: Box, P: int, h: float = 0.0,
                    quad: QuadratureScheme | None = None) -> PressureBounds:
    """Interpolation bounds on the pressure with explicit constants.

    Switching the couplings on along ``t in [0, 1]`` gives a convex,
    increasing ``f(t) = log Y(t) / |Lambda|``, so
    ``f(0) <= f(1) <= f(0) + f'(1)``. Here ``f(0)`` is the decoupled
    single-site value and ``f'(1)`` is bounded by ``J0 C / 2`` with
    ``C`` the largest loop norm ``<||omega_l||^2>``.
    """
    if not spec.translation_invariant:
        raise PreconditionError("pressure bounds need a translation-invariant model")
    s = _with_field(spec, h)
    action = build_action(s, box, P)
    if not action.is_ferromagnetic:
        raise PreconditionError("pressure bounds need ferromagnetic couplings")
    quad = quad if quad is not None else QuadratureScheme.for_action(action)
    o = ExactOracle(action, quad)
    n = action.n_sites
    single = ExactOracle(build_action(s, Box.cube((1,) * box.d), P), quad)
    log_single = single.log_partition()
    pairs = [(i, j) for i in range(n) for j in range(n) if action.coupling[i, j] != 0]
    ov = _pair_overlaps(o, pairs + [(i, i) for i in range(n)])
    g = sum(action.coupling[i, j] * ov[(i, j)] for i, j in pairs) / (2.0 * n)
    C = max(ov[(i, i)] for i in range(n))
    return PressureBounds(float(log_single), float(o.log_partition() / n), float(g), float(j_hat_zero(spec)), float(C))


# ---------------------------------------------------------------------------
# zeros in t = h^2


@dataclass(frozen=True)
class ZeroReport:
    """Roots of the truncated series of ``Z(h)/Z(0)`` in ``t = h^2``.

    ``classification`` is ``"consistent"``, ``"consistent-vacuous"``,
    ``"inconsistent"`` or ``"inconclusive"``.
    """

    order: int
    roots: np.ndarray
    trust_radius: float
    in_radius: np.ndarray
    classification: str
    coefficients: np.ndarray
    gaussian: bool = False

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "roots": [[float(r.real), float(r.imag)] for r in self.roots],
            "trust_radius": self.trust_radius,
            "in_radius": [[float(r.real), float(r.imag)] for r in self.in_radius],
            "classification": self.classification,
            "gaussian": self.gaussian,
        }


def _dft_coefficient(values: np.ndarray, k: int, M: int) -> complex:
    """``(1/M) sum_j values_j w^{-jk}`` with compensated sums."""
    ang = -2.0 * math.pi * k * np.arange(M) / M
    terms = values * np.exp(1j * ang)
    return complex(math.fsum(terms.real), math.fsum(terms.imag)) / M


_RADIUS_RATIO = 1.5


def partition_moments(oracle: ExactOracle, max_power: int, points: int | None = None) -> np.ndarray:
    """``<S^k>`` for ``k = 0..max_power`` with ``S = eps * sum x``.

    The Taylor coefficients ``<S^k>/k!`` of ``<exp(lam S)>`` are read off
    discrete Cauchy integrals. Each coefficient uses the circle whose
    radius sits near its saddle point for a Gaussian of the exact
    variance, which keeps the relative error near machine precision.
    For an even measure only the first quadrant is evaluated.
    """
    a = oracle.action
    n = a.n_sites
    var = oracle.expectation(Observable.total(n, a.P, a.epsilon) * Observable.total(n, a.P, a.epsilon))
    mean = oracle.expectation(Observable.total(n, a.P, a.epsilon))
    even = a.is_even
    sigma = math.sqrt(max(var - mean * mean, 1e-300))
    M = points if points is not None else 4 * (max_power // 4 + 1) + 16
    M = 4 * math.ceil(M / 4)
    ks = np.arange(max_power + 1)
    # saddle radii sqrt(k)/sigma for k <= max_power, covered geometrically
    top = math.sqrt(max(max_power, 1))
    count = max(1, math.ceil(math.log(top) / math.log(_RADIUS_RATIO)))
    radii = np.geomspace(1.0, top, count + 1) / sigma
    coeff = np.zeros(max_power + 1)
    best = np.full(max_power + 1, np.inf)
    for rho in radii:
        lam = rho * np.exp(2j * math.pi * np.arange(M) / M)
        if even:
            # F(-lam) = F(lam) and F(conj lam) = conj F(lam) fill the other quadrants
            quarter = M // 4
            vals = np.empty(M, dtype=complex)
            vals[: quarter + 1] = oracle.tilted_partition(lam[: quarter + 1])
            for j in range(quarter + 1, M // 2 + 1):
                vals[j] = np.conj(vals[M // 2 - j])
            vals[M // 2 :] = vals[: M // 2]
        else:
            vals = oracle.tilted_partition(lam)
        fmax = float(np.max(np.abs(vals)))
        for k in ks:
            # roundoff on coefficient k scales like eps * max|F| / rho^k
            err = fmax / rho**k
            c = _dft_coefficient(vals, int(k), M).real / rho**k
            ref = abs(c) if c != 0 else 1e-300
            if err / ref < best[k]:
                best[k] = err / ref
                coeff[k] = c
    if even:
        coeff[1::2] = 0.0
    coeff[0] = 1.0
    moments = coeff * np.array([math.factorial(int(k)) for k in ks], dtype=float)
    return moments


def zeros_from_moments(moments: Sequence[float], order: int, gaussian: bool = False,
                       rel: float = _TRUST_REL) -> ZeroReport:
    """Classify the roots of ``sum_{n<=order} mu_{2n} t^n / (2n)!``.

    The trust radius is half the radius ``r`` at which the last term
    reaches ``rel`` times the truncated sum, i.e. where truncations of
    orders ``order - 1`` and ``order`` start to disagree. Coefficients
    are rescaled by the second moment before root finding.
    """
    mu = np.asarray(moments, dtype=float)
    if mu.size < 2 * order + 1:
        raise PreconditionError(f"need moments up to power {2 * order}")
    if order < 1 or order > 40:
        raise PreconditionError("order must lie in 1..40")
    s2 = mu[2] if mu[2] > 0 else 1.0
    c = np.array([mu[2 * k] / math.factorial(2 * k) / s2**k for k in range(order + 1)])
    if not np.all(np.isfinite(c)) or c[0] <= 0:
        raise ConvergenceError("moment sequence is not usable")
    last = c[-1]
    if last <= 0:
        r_trust = 0.0
    else:
        def excess(r):
            return last * r**order - rel * np.polynomial.polynomial.polyval(r, c)

        lo, hi = 0.0, 1.0
        while excess(hi) < 0 and hi < 1e12:
            lo, hi = hi, hi * 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if excess(mid) < 0:
                lo = mid
            else:
                hi = mid
        r_trust = 0.5 * lo
    roots = np.roots(c[::-1]).astype(complex) if order >= 1 else np.array([], dtype=complex)
    roots = roots[np.argsort(np.abs(roots))]
    inside = roots[np.abs(roots) < r_trust]
    if inside.size:
        ok = all(abs(r.imag) <= _ROOT_TOL * max(1.0, abs(r)) * 10 and r.real < 0 for r in inside)
        cls = "consistent" if ok else "inconsistent"
    else:
        cls = "consistent-vacuous" if gaussian else "inconclusive"
    return ZeroReport(order, roots / s2, r_trust / s2, inside / s2, cls, c, gaussian)


def locate_partition_zeros(spec: ModelSpec, box: Box, P: int, quad: QuadratureScheme | None = None,
                           order: int = 12, s_scale: float = 1.0, max_states: int = 4096) -> ZeroReport:
    """Zeros in ``t = h^2`` of the degree-``order`` truncation of ``Z(h)/Z(0)``.

    ``s_scale`` multiplies ``S`` (roots then scale by ``s_scale^-2``).
    """
    if spec.potential.field != 0 or any(p.field != 0 for _, p in spec.site_potentials):
        raise PreconditionError("the potential must be even; the field enters through the tilt")
    if s_scale <= 0:
        raise PreconditionError("s_scale must be positive")
    action = build_action(spec, box, P)
    o = ExactOracle(action, quad, max_states=max_states)
    mu = partition_moments(o, 2 * order)
    mu = mu * s_scale ** np.arange(mu.size)
    gaussian = bool(np.all(action.even_coeffs == 0))
    return zeros_from_moments(mu, order, gaussian)


# ---------------------------------------------------------------------------
# nested boxes


@dataclass(frozen=True)
class VanHoveEntry:
    block: tuple
    box: tuple
    p_block: float
    p_box: float
    increment: float
    derivative_bound: float
    boundary_bound: float

    @property
    def holds(self) -> bool:
        tol = 1e-9
        return (self.increment >= -tol and self.increment <= self.derivative_bound + tol
                and self.derivative_bound <= self.boundary_bound + tol)


@dataclass(frozen=True)
class VanHoveReport:
    entries: tuple
    monotone: bool

    def __bool__(self):
        return self.monotone

    def to_dict(self) -> dict:
        return {
            "monotone": self.monotone,
            "entries": [dict(block=list(e.block), box=list(e.box), p_block=e.p_block, p_box=e.p_box,
                             increment=e.increment, derivative_bound=e.derivative_bound,
                             boundary_bound=e.boundary_bound, holds=e.holds) for e in self.entries],
        }


def _block_labels(shape, block):
    idx = np.indices(shape).reshape(len(shape), -1).T
    return [tuple(int(v) // b for v, b in zip(row, block)) for row in idx]


def van_hove_pressure_check(spec: ModelSpec, boxes: Sequence, P: int,
                            quad: QuadratureScheme | None = None, h: float = 0.0) -> VanHoveReport:
    """Compare pressures of consecutive boxes, each tiled by copies of the previous one.

    With the couplings between tiles switched on along ``t in [0, 1]``,
    the per-site pressure rises from the tile's value by at most the
    derivative at ``t = 1``, the inter-tile coupling times the loop
    overlaps, which is in turn at most ``J(Gamma) C`` with ``J(Gamma)``
    the coupling leaving one tile per site and ``C`` the largest loop
    norm.
    """
    if not spec.translation_invariant:
        raise PreconditionError("nested-box comparison needs a translation-invariant model")
    s = _with_field(spec, h)
    shapes = [tuple(int(v) for v in (b.shape if isinstance(b, Box) else b)) for b in boxes]
    if len(shapes) < 2:
        raise PreconditionError("need at least two boxes")
    entries = []
    cache = {}

    def oracle(shape):
        if shape not in cache:
            act = build_action(s, Box.cube(shape), P)
            if not act.is_ferromagnetic:
                raise PreconditionError("nested-box comparison needs ferromagnetic couplings")
            q = quad if quad is not None else QuadratureScheme.for_action(act)
            cache[shape] = ExactOracle(act, q)
        return cache[shape]

    for small, big in zip(shapes[:-1], shapes[1:]):
        if len(small) != len(big) or any(b % a for a, b in zip(small, big)):
            raise PreconditionError(f"box {big} is not tiled by copies of {small}")
        o_small, o_big = oracle(small), oracle(big)
        n_small, n_big = o_small.action.n_sites, o_big.action.n_sites
        p_small = o_small.log_partition() / n_small
        p_big = o_big.log_partition() / n_big
        labels = _block_labels(big, small)
        J = o_big.action.coupling
        cross = [(i, j) for i in range(n_big) for j in range(n_big) if J[i, j] != 0 and labels[i] != labels[j]]
        ov = _pair_overlaps(o_big, cross + [(i, i) for i in range(n_big)])
        deriv = sum(J[i, j] * ov[(i, j)] for i, j in cross) / (2.0 * n_big)
        # coupling leaving one tile, per tile site, counted from the big box
        leaving = sum(J[i, j] for i, j in cross) / n_big
        C = max(ov[(i, i)] for i in range(n_big))
        entries.append(VanHoveEntry(small, big, float(p_small), float(p_big), float(p_big - p_small),
                                    float(deriv), float(leaving * C)))
    return VanHoveReport(tuple(entries), all(e.holds for e in entries))
