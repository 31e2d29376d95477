"""Closed-form phase-transition, uniqueness and stabilization criteria.

Brillouin-zone integrals of functions of ``E(p) = sum_j (1 - cos p_j)``
are reduced to one-dimensional integrals with the heat-kernel identity

    (2 pi)^-d int exp(-t E(p)) dp = B(t)^d,   B(t) = exp(-t) I_0(t),

so that ``f(E)`` with a known Laplace representation becomes an integral
over ``t``. The integrals are evaluated by the trapezoidal rule in
``s = log t``, which converges geometrically for these integrands. A
direct product midpoint rule over the zone is provided as an
independent check (:func:`theta_d_bz`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from .errors import ConvergenceError, DivergentSumError, ModelError, PreconditionError
from .model import ModelSpec, validate_model
from .spectral import SchrodingerProblem, solve_schrodinger, spectral_gap

__all__ = [
    "QuadratureValue",
    "DecompositionSpec",
    "PhaseTransitionResult",
    "StabilizationResult",
    "UniquenessResult",
    "CriterionReport",
    "theta_d",
    "theta_d_bz",
    "watson_integral",
    "phi_series",
    "t_star",
    "t_star_residual",
    "beta_star",
    "beta_star_rhs",
    "beta_star_rhs_bz",
    "check_phase_transition",
    "check_quantum_stabilization",
    "check_high_T_uniqueness",
    "evaluate_criteria",
]

S_LO, S_HI = -70.0, 90.0
DEFAULT_STEP = 0.1
ROOT_TOL = 1e-8
ZERO_RUN = 64


@dataclass(frozen=True)
class QuadratureValue:
    """A quadrature result with an error estimate from step doubling."""

    value: float
    error: float
    step: float

    def __float__(self):
        return self.value


def _bessel_damped(t: np.ndarray) -> np.ndarray:
    """``exp(-t) I_0(t)`` for ``t >= 0``, stable for large t."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = t < 1e4
    out[small] = special.ive(0, t[small])
    tl = t[~small]
    u = 1.0 / tl
    series = 1 + u / 8 + 9 * u**2 / 128 + 225 * u**3 / 3072 + 11025 * u**4 / 98304
    out[~small] = series / np.sqrt(2 * math.pi * tl)
    return out


def _log_trapezoid(g: Callable, step: float) -> float:
    """``int_0^inf g(t) dt`` as a trapezoid sum in ``s = log t``."""
    n = int(round((S_HI - S_LO) / step))
    s = S_LO + step * np.arange(n + 1)
    t = np.exp(s)
    vals = g(t) * t
    return float(step * (np.sum(vals) - 0.5 * (vals[0] + vals[-1])))


def _with_error(fn: Callable[[float], float], step: float) -> QuadratureValue:
    fine = fn(step)
    coarse = fn(2.0 * step)
    return QuadratureValue(fine, abs(fine - coarse), step)


def _check_dim(d: int):
    if int(d) != d or d < 2:
        raise PreconditionError(f"zone integrals of E(p)^(-1/2) diverge for d < 2 (d={d})")


def theta_d(d: int, quad_resolution: float = DEFAULT_STEP, tol: float | None = None) -> QuadratureValue:
    """``(2 pi)^-d int_{(-pi, pi]^d} E(p)^(-1/2) dp``.

    Parameters
    ----------
    d : int
        Dimension, at least 2.
    quad_resolution : float
        Step of the trapezoid rule in ``log t``. The error estimate
        compares with twice this step.
    tol : float, optional
        Raise if the relative error estimate exceeds it.
    """
    _check_dim(d)
    g = lambda t: _bessel_damped(t) ** d / np.sqrt(math.pi * t)
    out = _with_error(lambda h: _log_trapezoid(g, h), quad_resolution)
    if tol is not None and out.error > tol * out.value:
        raise ConvergenceError(f"theta_{d} resolution too low: error {out.error:.2e}")
    return out


def watson_integral(d: int, quad_resolution: float = DEFAULT_STEP) -> float:
    """``(2 pi)^-d int E(p)^-1 dp`` (finite for d >= 3)."""
    if d < 3:
        raise PreconditionError("the zone integral of 1/E diverges for d < 3")
    return _log_trapezoid(lambda t: _bessel_damped(t) ** d, quad_resolution)


def _zone_midpoint(fn: Callable[[np.ndarray], np.ndarray], d: int, n: int, octant: bool = False) -> float:
    """Product midpoint rule over the zone, summed slice by slice."""
    if octant:
        p = (np.arange(n // 2) + 0.5) * (2 * math.pi / n)
    else:
        p = -math.pi + (np.arange(n) + 0.5) * (2 * math.pi / n)
    c = 1.0 - np.cos(p)
    if d == 1:
        total = float(np.sum(fn(c)))
    else:
        rest = c
        for _ in range(d - 2):
            rest = np.add.outer(rest, c).ravel()
        total = 0.0
        for ci in c:
            total += float(np.sum(fn(ci + rest)))
    count = float(n) ** d
    return total / count * (2.0**d if octant else 1.0)


def theta_d_bz(d: int, n: int = 128, octant: bool = False, richardson: bool = True) -> float:
    """Zone midpoint rule for ``theta_d`` with ``h^2`` Richardson extrapolation.

    The midpoint nodes avoid ``p = 0``. Used as an independent check of
    :func:`theta_d`; cost grows like ``n^d``.
    """
    _check_dim(d)
    fn = lambda e: 1.0 / np.sqrt(e)
    fine = _zone_midpoint(fn, d, n, octant)
    if not richardson:
        return fine
    coarse = _zone_midpoint(fn, d, n // 2, octant)
    return (4.0 * fine - coarse) / 3.0


# ---------------------------------------------------------------------------


def phi_series(coeffs, t: float, max_terms: int = 10000) -> float:
    """``Phi(t) = sum_{s>=2} (2s)! / (2^(s-1) (s-1)!) b_s t^(s-1)``.

    ``coeffs`` lists ``b_2, b_3, ...`` or is a callable ``s -> b_s`` for an
    infinite series, which is summed until the terms fall below 1e-17 of
    the partial sum or ``ZERO_RUN`` consecutive coefficients vanish.

    Raises
    ------
    DivergentSumError
        If an infinite series does not converge at ``t``.
    """
    if t < 0:
        raise PreconditionError("Phi is defined for t >= 0")
    if not callable(coeffs):
        total = 0.0
        for s, b in enumerate(coeffs, start=2):
            total += _phi_factor(s) * b * t ** (s - 1)
        return total
    total, prev = 0.0, math.inf
    zeros = 0
    for s in range(2, max_terms):
        b = coeffs(s)
        if b == 0:
            zeros += 1
            if zeros >= ZERO_RUN:
                return total
            continue
        zeros = 0
        term = math.exp(_log_phi_factor(s) + (s - 1) * math.log(t)) * b if t > 0 else 0.0
        total += term
        if abs(term) <= 1e-17 * abs(total):
            return total
        if not math.isfinite(total) or (s > 50 and abs(term) > prev):
            break
        prev = abs(term)
    raise DivergentSumError(f"Phi series diverges at t={t}")


def _log_phi_factor(s: int) -> float:
    return math.lgamma(2 * s + 1) - (s - 1) * math.log(2) - math.lgamma(s)


def _phi_factor(s: int) -> float:
    return math.factorial(2 * s) / (2 ** (s - 1) * math.factorial(s - 1))


def _check_t_star_pre(a: float, b_coeffs: Sequence[float]):
    if len(b_coeffs) < 2:
        raise PreconditionError("need b_1 and at least one higher coefficient")
    if not 2 * b_coeffs[0] < -a:
        raise PreconditionError(f"t* needs 2 b_1 < -a (b_1={b_coeffs[0]}, a={a})")
    higher = b_coeffs[1:]
    if any(b < 0 for b in higher) or not any(b > 0 for b in higher):
        raise PreconditionError("t* needs b_s >= 0 for s >= 2, not all zero")


def t_star_residual(a: float, b_coeffs: Sequence[float], t: float) -> float:
    return a + 2 * b_coeffs[0] + phi_series(b_coeffs[1:], t)


def t_star(a: float, b_coeffs: Sequence[float]) -> float:
    """Unique positive root of ``a + 2 b_1 + Phi(t) = 0``.

    ``b_coeffs`` lists ``b_1, b_2, ..., b_r``.
    """
    b_coeffs = [float(b) for b in b_coeffs]
    _check_t_star_pre(a, b_coeffs)
    f = lambda t: t_star_residual(a, b_coeffs, t)
    hi = 1.0
    while f(hi) <= 0:
        hi *= 2.0
        if hi > 1e300:
            raise ConvergenceError("no sign change for t*")  # pragma: no cover
    root = optimize.brentq(f, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(f(root)) > 1e-12 * max(1.0, abs(a + 2 * b_coeffs[0])):
        raise ConvergenceError(f"t* residual {f(root):.2e} above tolerance")  # pragma: no cover
    return float(root)


# ---------------------------------------------------------------------------


def _coth_kernel(t: np.ndarray, kappa: float) -> np.ndarray:
    """Inverse Laplace transform of ``coth(kappa sqrt(E)) / sqrt(E)`` in E.

    Image sum for ``t < kappa^2`` and its Poisson-dual form otherwise.
    """
    out = np.empty_like(t)
    small = t < kappa * kappa
    ts = t[small]
    acc = np.ones_like(ts)
    for k in range(1, 9):
        acc += 2.0 * np.exp(-(k * k) * kappa * kappa / ts)
    out[small] = acc / np.sqrt(math.pi * ts)
    tl = t[~small]
    acc = np.ones_like(tl)
    for n in range(1, 5):
        acc += 2.0 * np.exp(-(math.pi * n) ** 2 * tl / (kappa * kappa))
    out[~small] = acc / kappa
    return out


def beta_star_rhs(beta: float, d: int, m: float, J: float, quad_resolution: float = DEFAULT_STEP) -> float:
    """``(2 pi)^-d int (8 m J E)^(-1/2) coth(sqrt(beta^2 J E / (2m))) dp``.

    Strictly decreasing in beta with limit ``theta_d / sqrt(8 m J)``.
    """
    _check_dim(d)
    if not (beta > 0 and m > 0 and J > 0):
        raise PreconditionError("beta, m and J must be positive")
    kappa = beta * math.sqrt(J / (2.0 * m))
    g = lambda t: _coth_kernel(t, kappa) * _bessel_damped(t) ** d
    return _log_trapezoid(g, quad_resolution) / math.sqrt(8.0 * m * J)


def beta_star_rhs_bz(beta: float, d: int, m: float, J: float, n: int = 64) -> float:
    """Zone midpoint evaluation of :func:`beta_star_rhs` for ``d >= 3``.

    The ``1/(kappa E)`` singular part is integrated with
    :func:`watson_integral`; the remainder is smooth and periodic, so the
    midpoint rule converges geometrically.
    """
    if d < 3:
        raise PreconditionError("zone check implemented for d >= 3")
    kappa = beta * math.sqrt(J / (2.0 * m))

    def smooth(e):
        x = kappa * np.sqrt(e)
        # (coth x - 1/x)/sqrt(E), series near x = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            direct = (1.0 / np.tanh(x) - 1.0 / x) / np.sqrt(e)
        series = kappa * (1.0 / 3.0 - x * x / 45.0 + 2.0 * x**4 / 945.0)
        return np.where(x < 1e-3, series, direct)

    total = _zone_midpoint(smooth, d, n) + watson_integral(d, 0.05) / kappa
    return total / math.sqrt(8.0 * m * J)


def beta_star(d: int, m: float, J: float, t_star_value: float, quad_resolution: float = DEFAULT_STEP) -> float:
    """Inverse temperature at which the zone integral equals ``t*``.

    Raises
    ------
    PreconditionError
        If ``J <= theta_d^2 / (8 m t*^2)``, when no root exists.
    """
    th = theta_d(d, quad_resolution).value
    limit = th / math.sqrt(8.0 * m * J)
    if not limit < t_star_value:
        raise PreconditionError(
            f"no finite beta*: J={J} does not exceed the threshold {th**2 / (8 * m * t_star_value**2)}"
        )
    f = lambda b: beta_star_rhs(b, d, m, J, quad_resolution) - t_star_value
    lo, hi = 1.0, 1.0
    while f(lo) <= 0:
        lo /= 2.0
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise ConvergenceError("beta* bracket did not close")
    root = optimize.brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(root)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhaseTransitionResult:
    predicted: bool
    threshold: float
    theta_d: float
    t_star: float
    beta_star: float | None = None
    beta_star_residual: float | None = None

    def __bool__(self):
        return self.predicted


def check_phase_transition(d: int, m: float, J: float, a: float, b_coeffs: Sequence[float],
                           quad_resolution: float = DEFAULT_STEP) -> PhaseTransitionResult:
    """Evaluate ``J > theta_d^2 / (8 m t*^2)`` and attach ``beta*`` when it holds.

    The residual of ``beta*`` is evaluated at half the quadrature step,
    independently of the resolution used to solve for it.
    """
    if d < 3:
        raise PreconditionError("the phase-transition criterion needs d >= 3")
    ts = t_star(a, b_coeffs)
    th = theta_d(d, quad_resolution).value
    threshold = th**2 / (8.0 * m * ts**2)
    if not J > threshold:
        return PhaseTransitionResult(False, threshold, th, ts)
    bs = beta_star(d, m, J, ts, quad_resolution)
    residual = beta_star_rhs(bs, d, m, J, quad_resolution / 2.0) - ts
    if abs(residual) > ROOT_TOL:
        raise ConvergenceError(f"beta* residual {residual:.2e} above {ROOT_TOL}")
    return PhaseTransitionResult(True, threshold, th, ts, bs, residual)


@dataclass(frozen=True)
class StabilizationResult:
    holds: bool
    rigidity: float
    j_hat_zero: float
    nn_holds: bool | None = None
    nn_threshold: float | None = None

    def __bool__(self):
        return self.holds


def check_quantum_stabilization(m: float, gap: float, j_hat_zero: float, *, d: int | None = None,
                                J: float | None = None, t_star_value: float | None = None) -> StabilizationResult:
    """``m Delta^2 > J0`` and, if ``d, J, t*`` are given, ``J < 1/(8 d m t*^2)``."""
    q = m * float(gap) ** 2
    nn_holds = nn_threshold = None
    if d is not None and J is not None and t_star_value is not None:
        nn_threshold = 1.0 / (8.0 * d * m * t_star_value**2)
        nn_holds = J < nn_threshold
    return StabilizationResult(q > j_hat_zero, q, j_hat_zero, nn_holds, nn_threshold)


@dataclass(frozen=True)
class DecompositionSpec:
    """Split of the potential into a convex part with curvature ``>= b`` and
    a bounded part with oscillation ``delta``."""

    b: float
    delta: float = 0.0

    def __post_init__(self):
        if math.isnan(self.b) or math.isnan(self.delta) or self.b == math.inf:
            raise ModelError("b and delta must be numbers, b finite")
        if self.delta < 0:
            raise ModelError("delta must be nonnegative")

    def validate(self, a: float):
        if self.b < -a:
            raise ModelError(f"decomposition needs b >= -a (b={self.b}, a={a})")


@dataclass(frozen=True)
class UniquenessResult:
    holds: bool
    holds_all_beta: bool | None

    def __bool__(self):
        return self.holds


def check_high_T_uniqueness(a: float, decomposition: DecompositionSpec, beta: float,
                            j_hat_zero: float) -> UniquenessResult:
    """``exp(beta delta) < (a + b)/J0``, evaluated as ``J0 exp(beta delta) < a + b``.

    For ``delta = 0`` the condition does not involve beta and
    ``holds_all_beta`` reports it; otherwise ``holds_all_beta`` is None.
    """
    decomposition.validate(a)
    c = a + decomposition.b
    if j_hat_zero == 0:
        holds = c > 0
    else:
        with np.errstate(over="ignore"):
            growth = math.exp(beta * decomposition.delta) if beta * decomposition.delta < 700 else math.inf
        holds = j_hat_zero * growth < c
    all_beta = (j_hat_zero < c) if decomposition.delta == 0 else None
    return UniquenessResult(bool(holds), all_beta)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CriterionReport:
    theta_d: float | None
    theta_d_error: float | None
    t_star: float | None
    beta_star: float | None
    delta_gap: float
    gap_index: int
    gap_at_edge: bool
    j_hat_zero: float
    phase_transition_predicted: bool
    phase_threshold: float | None
    quantum_stabilization: bool
    nn_stabilization: bool | None
    high_T_unique: bool | None
    high_T_unique_all_beta: bool | None
    residuals: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    notes: tuple = ()

    def __post_init__(self):
        if (self.beta_star is not None) != bool(self.phase_transition_predicted):
            raise ValueError("beta_star must be present exactly when a transition is predicted")

    def to_dict(self) -> dict:
        return {
            "theta_d": self.theta_d,
            "theta_d_error": self.theta_d_error,
            "t_star": self.t_star,
            "beta_star": self.beta_star,
            "delta_gap": self.delta_gap,
            "gap_index": self.gap_index,
            "gap_at_edge": self.gap_at_edge,
            "j_hat_zero": self.j_hat_zero,
            "phase_transition_predicted": self.phase_transition_predicted,
            "phase_threshold": self.phase_threshold,
            "quantum_stabilization": self.quantum_stabilization,
            "nn_stabilization": self.nn_stabilization,
            "high_T_unique": self.high_T_unique,
            "high_T_unique_all_beta": self.high_T_unique_all_beta,
            "residuals": dict(self.residuals),
            "tolerances": dict(self.tolerances),
            "notes": list(self.notes),
        }


def _nn_coupling(spec: ModelSpec) -> float:
    """Smallest coupling over unit offsets (zero if any is missing)."""
    units = []
    for j in range(spec.d):
        for sgn in (1, -1):
            delta = [0] * spec.d
            delta[j] = sgn
            units.append(spec.couplings.offset_value(delta))
    return min(units)


def evaluate_criteria(spec: ModelSpec, decomposition: DecompositionSpec | None = None, *,
                      quad_resolution: float = DEFAULT_STEP, n_points: int = 200, n_keep: int = 64) -> CriterionReport:
    """Evaluate every criterion that applies to a translation-invariant model.

    The gap is that of the one-site operator with the model's own
    potential. ``t*`` and the transition need a double-well potential
    (``2 b_1 < -a``, higher coefficients nonnegative) and ``d >= 3``.
    """
    report = validate_model(spec)
    if not report.passes:
        raise ModelError("model fails validation: " + "; ".join(report.diagnostics))
    if not spec.translation_invariant:
        raise PreconditionError("criteria are evaluated for translation-invariant models")
    notes = []
    residuals, tolerances = {}, {}
    a, m = spec.rigidity, spec.mass
    jz = report.j_hat_zero
    pot = spec.potential
    th = th_err = None
    if spec.d >= 2:
        q = theta_d(spec.d, quad_resolution)
        th, th_err = q.value, q.error
    ts = None
    try:
        ts = t_star(a, list(pot.even_coeffs))
        residuals["t_star"] = t_star_residual(a, pot.even_coeffs, ts)
        tolerances["t_star"] = 1e-12
    except PreconditionError as exc:
        notes.append(f"t* not defined: {exc}")
    predicted, bs, threshold = False, None, None
    J = _nn_coupling(spec)
    if ts is not None and spec.d >= 3 and J > 0:
        pt = check_phase_transition(spec.d, m, J, a, pot.even_coeffs, quad_resolution)
        predicted, threshold = pt.predicted, pt.threshold
        if predicted:
            bs = pt.beta_star
            residuals["beta_star"] = pt.beta_star_residual
            tolerances["beta_star"] = ROOT_TOL
    elif spec.d < 3:
        notes.append("phase-transition criterion needs d >= 3")
    dec = solve_schrodinger(SchrodingerProblem(m, a, pot, n_points=n_points, n_keep=n_keep))
    gap = spectral_gap(dec)
    if gap.at_truncation_edge:
        notes.append("minimal gap attained at the truncation edge")
    nn_kind = spec.couplings.kind == "nearest_neighbor"
    stab = check_quantum_stabilization(
        m, gap.value, jz, d=spec.d if nn_kind else None, J=spec.couplings.J if nn_kind else None, t_star_value=ts
    )
    unique = all_beta = None
    if decomposition is not None:
        u = check_high_T_uniqueness(a, decomposition, spec.beta, jz)
        unique, all_beta = u.holds, u.holds_all_beta
    return CriterionReport(
        theta_d=th,
        theta_d_error=th_err,
        t_star=ts,
        beta_star=bs,
        delta_gap=gap.value,
        gap_index=gap.index,
        gap_at_edge=gap.at_truncation_edge,
        j_hat_zero=jz,
        phase_transition_predicted=predicted,
        phase_threshold=threshold,
        quantum_stabilization=stab.holds,
        nn_stabilization=stab.nn_holds,
        high_T_unique=unique,
        high_T_unique_all_beta=all_beta,
        residuals=residuals,
        tolerances=tolerances,
        notes=tuple(notes),
    )
