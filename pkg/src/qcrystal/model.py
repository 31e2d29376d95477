"""Crystal model definition, admissibility checks and interaction norms.

Sites are points of Z^d given as integer tuples. Finite boxes enumerate
their sites in row-major order, and every module relies on that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import integrate

from .errors import DivergentSumError, ModelError, TruncationError

__all__ = [
    "Potential",
    "DynamicalMatrix",
    "ModelSpec",
    "WeightFamily",
    "LowerBound",
    "UpperBound",
    "ValidationReport",
    "validate_model",
    "weight",
    "j_hat_alpha",
    "j_hat_zero",
]


def _finite(value, what):
    value = float(value)
    if not math.isfinite(value):
        raise ModelError(f"{what} must be finite, got {value!r}")
    return value


@dataclass(frozen=True)
class Potential:
    """One-site anharmonic potential ``V(x) = sum_s b_s x^(2s) - h x``.

    Parameters
    ----------
    even_coeffs : sequence of float
        Coefficients ``b_1, ..., b_r`` of ``x^2, ..., x^(2r)``. Trailing
        zeros are dropped.
    field : float
        External field ``h``.
    """

    even_coeffs: tuple = ()
    field: float = 0.0

    def __post_init__(self):
        coeffs = [_finite(c, "potential coefficient") for c in self.even_coeffs]
        while coeffs and coeffs[-1] == 0.0:
            coeffs.pop()
        if len(coeffs) >= 2 and coeffs[-1] < 0:
            raise ModelError(
                f"leading coefficient of x^{2 * len(coeffs)} must be positive, got {coeffs[-1]}"
            )
        object.__setattr__(self, "even_coeffs", tuple(coeffs))
        object.__setattr__(self, "field", _finite(self.field, "field"))

    @property
    def r(self) -> int:
        """Degree bound: V grows like x^(2r)."""
        return len(self.even_coeffs)

    @property
    def is_even(self) -> bool:
        return self.field == 0.0

    def t_coefficients(self) -> np.ndarray:
        """Coefficients of the even part as a polynomial in ``t = x^2``, constant first."""
        return np.array((0.0,) + self.even_coeffs)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        t = x * x
        out = np.zeros_like(t)
        for c in reversed(self.even_coeffs):
            out = (out + c) * t
        return out - self.field * x

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        t = x * x
        out = np.zeros_like(t)
        for s in range(self.r, 0, -1):
            out = out * t + 2 * s * self.even_coeffs[s - 1]
        return out * x - self.field

    def with_field(self, h: float) -> "Potential":
        return Potential(self.even_coeffs, h)


def _offset_key(offset, d=None):
    key = tuple(int(v) for v in offset)
    if d is not None and len(key) != d:
        raise ModelError(f"offset {key} does not have dimension {d}")
    return key


@dataclass(frozen=True)
class DynamicalMatrix:
    """Translation-invariant pair couplings ``J(l - l')``.

    Use the constructors :meth:`nearest_neighbor`, :meth:`finite_range`,
    :meth:`exponential_decay` and :meth:`polynomial_decay`. Distances are
    Euclidean.
    """

    kind: str
    J: float = 0.0
    rate: float = 0.0
    exponent: float = 0.0
    table: tuple = ()

    _KINDS = ("nearest_neighbor", "finite_range", "exponential_decay", "polynomial_decay")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ModelError(f"unknown coupling kind {self.kind!r}")
        object.__setattr__(self, "J", _finite(self.J, "coupling J"))
        if self.kind == "exponential_decay" and not self.rate > 0:
            raise ModelError("exponential decay rate must be positive")
        if self.kind == "polynomial_decay":
            _finite(self.exponent, "decay exponent")
        items = []
        for offset, value in self.table:
            items.append((_offset_key(offset), _finite(value, "coupling entry")))
        dims = {len(k) for k, _ in items}
        if len(dims) > 1:
            raise ModelError("finite-range table mixes offset dimensions")
        object.__setattr__(self, "table", tuple(sorted(items)))

    @classmethod
    def nearest_neighbor(cls, J: float) -> "DynamicalMatrix":
        return cls("nearest_neighbor", J=J)

    @classmethod
    def finite_range(cls, table: Mapping) -> "DynamicalMatrix":
        return cls("finite_range", table=tuple(dict(table).items()))

    @classmethod
    def exponential_decay(cls, J: float, rate: float) -> "DynamicalMatrix":
        return cls("exponential_decay", J=J, rate=rate)

    @classmethod
    def polynomial_decay(cls, J: float, exponent: float) -> "DynamicalMatrix":
        """``J (1 + |l - l'|)^(-d - exponent)``."""
        return cls("polynomial_decay", J=J, exponent=exponent)

    @classmethod
    def zero(cls) -> "DynamicalMatrix":
        return cls("nearest_neighbor", J=0.0)

    @property
    def table_map(self) -> dict:
        return dict(self.table)

    @property
    def range(self) -> float:
        """Interaction radius R (infinite for decaying kinds)."""
        if self.kind == "nearest_neighbor":
            return 1.0 if self.J != 0 else 0.0
        if self.kind == "finite_range":
            radii = [math.sqrt(sum(v * v for v in k)) for k, j in self.table if j != 0]
            return max(radii, default=0.0)
        return math.inf if self.J != 0 else 0.0

    @property
    def is_ferromagnetic(self) -> bool:
        if self.kind == "finite_range":
            return all(j >= 0 for _, j in self.table)
        return self.J >= 0

    def radial(self, r, d: int):
        """Coupling as a function of distance for the isotropic kinds."""
        r = np.asarray(r, dtype=float)
        if self.kind == "nearest_neighbor":
            return np.where(r == 1.0, self.J, 0.0)
        if self.kind == "exponential_decay":
            return np.where(r > 0, self.J * np.exp(-self.rate * r), 0.0)
        if self.kind == "polynomial_decay":
            return np.where(r > 0, self.J * (1.0 + r) ** (-d - self.exponent), 0.0)
        raise ModelError("finite-range couplings are not radial")

    def offset_value(self, delta: Sequence[int]) -> float:
        delta = _offset_key(delta)
        if self.kind == "finite_range":
            return self.table_map.get(delta, 0.0)
        r = math.sqrt(sum(v * v for v in delta))
        return float(self.radial(r, len(delta)))

    def entry(self, site1: Sequence[int], site2: Sequence[int]) -> float:
        """``J_{l l'}`` for two sites of Z^d."""
        if len(site1) != len(site2):
            raise ModelError("sites have different dimensions")
        return self.offset_value([b - a for a, b in zip(site1, site2)])

    def offsets(self, d: int, radius: float) -> list:
        """Nonzero coupling offsets with ``|delta| <= radius`` as ``(delta, J)`` pairs."""
        if self.kind == "finite_range":
            return [(k, j) for k, j in self.table if j != 0 and math.sqrt(sum(v * v for v in k)) <= radius]
        R = int(math.floor(radius))
        out = []
        for delta in np.ndindex(*([2 * R + 1] * d)):
            delta = tuple(v - R for v in delta)
            value = self.offset_value(delta)
            if value != 0 and math.sqrt(sum(v * v for v in delta)) <= radius:
                out.append((delta, value))
        return out


@dataclass(frozen=True)
class ModelSpec:
    """A quantum anharmonic crystal on Z^d.

    ``potential`` is shared by all sites; ``site_potentials`` optionally
    overrides it on individual sites, which makes the model not
    translation invariant.
    """

    d: int
    mass: float
    rigidity: float
    beta: float
    potential: Potential = field(default_factory=Potential)
    couplings: DynamicalMatrix = field(default_factory=DynamicalMatrix.zero)
    nu: int = 1
    site_potentials: tuple = ()

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ModelError(f"lattice dimension must be a positive integer, got {self.d}")
        if int(self.nu) != self.nu or self.nu < 1:
            raise ModelError(f"loop dimension must be a positive integer, got {self.nu}")
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "nu", int(self.nu))
        for name in ("mass", "rigidity", "beta"):
            value = _finite(getattr(self, name), name)
            if value <= 0:
                raise ModelError(f"{name} must be strictly positive, got {value}")
            object.__setattr__(self, name, value)
        overrides = self.site_potentials
        if isinstance(overrides, Mapping):
            overrides = overrides.items()
        items = sorted((_offset_key(k, self.d), v) for k, v in overrides)
        for _, v in items:
            if not isinstance(v, Potential):
                raise ModelError("site potentials must be Potential instances")
        object.__setattr__(self, "site_potentials", tuple(items))
        table_dims = {len(k) for k, _ in self.couplings.table}
        if table_dims and table_dims != {self.d}:
            raise ModelError("coupling table offsets do not match the lattice dimension")

    @property
    def translation_invariant(self) -> bool:
        return not self.site_potentials

    def potential_at(self, site: Sequence[int]) -> Potential:
        return dict(self.site_potentials).get(_offset_key(site), self.potential)

    def distinct_potentials(self) -> list:
        out = [self.potential]
        for _, v in self.site_potentials:
            if v not in out:
                out.append(v)
        return out


@dataclass(frozen=True)
class WeightFamily:
    """Decay weights used to temper configurations.

    ``exponential``: ``w(l, l') = exp(-alpha |l - l'|)``, alpha in (0, alpha_bar).
    ``polynomial``: ``w(l, l') = (1 + epsilon |l - l'|)^(-alpha d)``, alpha in (1, alpha_bar).
    ``alpha = 0`` is accepted as the degenerate constant weight.
    """

    kind: str
    alpha: float
    d: int
    epsilon: float = 1.0
    alpha_bar: float = math.inf

    def __post_init__(self):
        if self.kind not in ("exponential", "polynomial"):
            raise ModelError(f"unknown weight kind {self.kind!r}")
        if not self.epsilon > 0:
            raise ModelError("epsilon must be positive")
        lower = 0.0 if self.kind == "exponential" else 1.0
        a = float(self.alpha)
        if a != 0.0 and not (lower < a < self.alpha_bar):
            raise ModelError(
                f"alpha={a} outside the admissible interval ({lower}, {self.alpha_bar}) for {self.kind} weights"
            )

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        if self.alpha == 0:
            return np.ones_like(r)
        if self.kind == "exponential":
            return np.exp(-self.alpha * r)
        return (1.0 + self.epsilon * r) ** (-self.alpha * self.d)


def weight(family: WeightFamily, site1: Sequence[int], site2: Sequence[int]) -> float:
    """Closed-form weight ``w_alpha(site1, site2)``."""
    if len(site1) != family.d or len(site2) != family.d:
        raise ModelError("site dimension does not match the weight family")
    r = math.sqrt(sum((a - b) ** 2 for a, b in zip(site1, site2)))
    return float(family.radial(r))


# ---------------------------------------------------------------------------
# lattice sums


def _shell_counts(d: int, nmax: int) -> np.ndarray:
    """Number of points of Z^d with squared norm n, for n = 0..nmax."""
    kmax = math.isqrt(nmax)
    squares = np.arange(kmax + 1) ** 2
    counts = np.zeros(nmax + 1)
    counts[0] = 1.0
    for _ in range(d):
        new = counts.copy()
        for k in range(1, kmax + 1):
            s = squares[k]
            new[s:] += 2.0 * counts[: nmax + 1 - s]
        counts = new
    return counts


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)


def _radial_tail(f, d: int, R: float) -> tuple:
    """Rigorous bracket for ``sum_{|delta| > R} f(|delta|)`` with f decreasing beyond R - sqrt(d).

    Each lattice point owns a unit cube whose points lie within
    ``c = sqrt(d)/2`` of it, which sandwiches the sum between two radial
    integrals.
    """
    c = math.sqrt(d) / 2.0
    area = _sphere_area(d)
    upper, _ = integrate.quad(lambda r: r ** (d - 1) * f(r - c), R - c, math.inf, epsabs=0, epsrel=1e-13, limit=500)
    lower, _ = integrate.quad(lambda r: r ** (d - 1) * f(r + c), R + c, math.inf, epsabs=0, epsrel=1e-13, limit=500)
    return area * lower, area * upper


def _radial_lattice_sum(f, d: int, rtol: float, r_min: float = 0.0, r_cap: int | None = None) -> float:
    """``sum_{delta != 0} f(|delta|)`` with a certified tail.

    ``f`` must be positive and nonincreasing on ``[r_min, inf)``.
    """
    if r_cap is None:
        r_cap = 1 << 20 if d == 1 else int((1e9 / d) ** (1 / 3))
    R = max(8, int(math.ceil(r_min + 2 * math.sqrt(d))))
    while True:
        if d == 1:
            k = np.arange(1, R + 1, dtype=float)
            partial = 2.0 * float(np.sum(f(k)[::-1]))
        else:
            counts = _shell_counts(d, R * R)
            n = np.nonzero(counts)[0]
            n = n[n > 0]
            terms = counts[n] * f(np.sqrt(n.astype(float)))
            partial = float(np.sum(terms[::-1]))
        lo, hi = _radial_tail(f, d, float(R))
        estimate = partial + 0.5 * (lo + hi)
        halfwidth = 0.5 * (hi - lo)
        if not math.isfinite(hi):
            raise DivergentSumError("lattice sum diverges")
        if halfwidth <= rtol * abs(estimate) or estimate == 0:
            return estimate
        if R >= r_cap:
            raise TruncationError(
                f"lattice sum tail bound {halfwidth:.3e} exceeds rtol*sum = {rtol * estimate:.3e} "
                f"at radius cap {r_cap}; loosen rtol"
            )
        R = min(2 * R, r_cap)


def j_hat_alpha(spec: ModelSpec, family: WeightFamily, rtol: float | None = None) -> float:
    """Weighted interaction norm ``sup_l sum_l' |J_{l l'}| / w_alpha(l, l')``.

    Parameters
    ----------
    spec : ModelSpec
    family : WeightFamily
        ``alpha = 0`` returns the unweighted norm.
    rtol : float, optional
        Certified relative accuracy for infinite-range couplings. Defaults
        to 1e-12, or 1e-6 for polynomially decaying couplings whose slow
        tails cannot be summed to 1e-12 at desk scale.

    Raises
    ------
    DivergentSumError
        If the decay of J is too slow for the weights.
    """
    J = spec.couplings
    d = spec.d
    if family.d != d:
        raise ModelError("weight family dimension does not match the model")
    if rtol is None:
        rtol = 1e-6 if J.kind == "polynomial_decay" else 1e-12
    if J.kind == "finite_range":
        total = 0.0
        for delta, value in J.table:
            r = math.sqrt(sum(v * v for v in delta))
            total += abs(value) / float(family.radial(r))
        return total
    if J.kind == "nearest_neighbor":
        return 2 * d * abs(J.J) / float(family.radial(1.0))
    if J.J == 0:
        return 0.0
    A = abs(J.J)
    alpha = family.alpha
    if J.kind == "exponential_decay":
        if family.kind == "exponential" and alpha > 0:
            if alpha >= J.rate:
                raise DivergentSumError(
                    f"exponential weights with alpha={alpha} need coupling decay rate > alpha (rate={J.rate})"
                )
            kappa = J.rate - alpha
            return _radial_lattice_sum(lambda r: A * np.exp(-kappa * r), d, rtol)
        kappa, q, eps = J.rate, (alpha * d if alpha > 0 else 0.0), family.epsilon
        f = lambda r: A * np.exp(-kappa * r) * (1.0 + eps * np.maximum(r, 0)) ** q
        r_min = max(0.0, q / kappa - 1.0 / eps) if q else 0.0
        return _radial_lattice_sum(f, d, rtol, r_min=r_min)
    # polynomial decay: |J| ~ (1 + r)^(-d - gamma)
    gamma = J.exponent
    if gamma <= 0:
        raise DivergentSumError(f"polynomial decay exponent gamma={gamma} must be positive for a finite norm")
    p = d + gamma
    if alpha > 0 and family.kind == "exponential":
        raise DivergentSumError("exponential weights are incompatible with polynomially decaying couplings")
    q = alpha * d if alpha > 0 else 0.0
    if q >= gamma:
        raise DivergentSumError(
            f"polynomial weights need alpha < gamma/d = {gamma / d} (alpha={alpha})"
        )
    eps = family.epsilon
    f = lambda r: A * (1.0 + np.maximum(r, 0)) ** (-p) * (1.0 + eps * np.maximum(r, 0)) ** q
    r_min = 0.0
    if q and eps * p > q * eps:
        r_min = max(0.0, (q * eps - p) / (p * eps - q * eps))
    return _radial_lattice_sum(f, d, rtol, r_min=r_min)


def j_hat_zero(spec: ModelSpec, rtol: float | None = None) -> float:
    """Unweighted norm ``sup_l sum_l' |J_{l l'}|``."""
    return j_hat_alpha(spec, WeightFamily("exponential", 0.0, spec.d), rtol=rtol)


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class LowerBound:
    """``A |x|^(2r) + B <= V_l(x)`` for every site."""

    A: float
    B: float
    r: int

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.A * np.abs(x) ** (2 * self.r) + self.B


@dataclass(frozen=True)
class UpperBound:
    """``sum_s c_s |x|^(2s) + k |x| >= V_l(x)`` for every site."""

    even_coeffs: tuple
    abs_linear: float

    def __call__(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        out = self.abs_linear * ax
        for s, c in enumerate(self.even_coeffs, start=1):
            out = out + c * ax ** (2 * s)
        return out


@dataclass(frozen=True)
class ValidationReport:
    passes: bool
    derived_lower_bound: LowerBound | None
    derived_upper_bound: UpperBound
    j_hat_zero: float
    diagnostics: tuple

    def to_dict(self) -> dict:
        lb = self.derived_lower_bound
        return {
            "passes": self.passes,
            "derived_lower_bound": None if lb is None else {"A_V": lb.A, "B_V": lb.B, "r": lb.r},
            "derived_upper_bound": {
                "even_coeffs": list(self.derived_upper_bound.even_coeffs),
                "abs_linear": self.derived_upper_bound.abs_linear,
            },
            "j_hat_zero": self.j_hat_zero,
            "diagnostics": list(self.diagnostics),
        }


def _radial_minimum(coeffs_t: Sequence[float], abs_field: float) -> float:
    """Minimum over rho >= 0 of ``sum_s c_s rho^(2s) - |h| rho`` (c indexed from s=1)."""
    poly = np.zeros(2 * len(coeffs_t) + 1)
    for s, c in enumerate(coeffs_t, start=1):
        poly[2 * s] = c
    poly[1] -= abs_field
    candidates = [0.0]
    deriv = P.polyder(poly)
    if np.any(deriv != 0):
        for root in P.polyroots(P.polytrim(deriv)) if len(P.polytrim(deriv)) > 1 else []:
            if abs(root.imag) <= 1e-9 * max(1.0, abs(root)) and root.real >= 0:
                candidates.append(root.real)
    return float(min(P.polyval(c, poly) for c in candidates))


def validate_model(spec: ModelSpec) -> ValidationReport:
    """Check the standing assumptions on potentials and couplings.

    The lower bound ``A_V |x|^(2r) + B_V`` uses ``r`` the smallest degree
    among the site potentials, ``A_V`` half of the smallest leading
    coefficient of that degree, and ``B_V`` the exact minimum of the
    remainder over the critical points of its radial profile (less a
    1e-12 relative safety margin). The upper bound takes the largest
    coefficient of each power over all sites.
    """
    if not isinstance(spec, ModelSpec):
        raise ModelError("validate_model expects a ModelSpec")
    diagnostics = []
    potentials = spec.distinct_potentials()
    r = min(p.r for p in potentials)
    lower = None
    if r < 2:
        diagnostics.append(
            f"no lower bound A|x|^(2r) + B with r > 1: some site potential has degree x^{2 * r}"
        )
    else:
        A = min(p.even_coeffs[r - 1] for p in potentials if p.r == r) / 2.0
        B = math.inf
        for p in potentials:
            rest = list(p.even_coeffs)
            rest[r - 1] -= A
            B = min(B, _radial_minimum(rest, abs(p.field)))
        B -= 1e-12 * max(1.0, abs(B))
        lower = LowerBound(A, B, r)
    width = max(p.r for p in potentials)
    upper = UpperBound(
        tuple(max((p.even_coeffs[s] if s < p.r else 0.0) for p in potentials) for s in range(width)),
        max(abs(p.field) for p in potentials),
    )
    J = spec.couplings
    if J.kind == "finite_range":
        table = J.table_map
        zero = (0,) * spec.d
        if table.get(zero, 0.0) != 0.0:
            diagnostics.append(f"diagonal coupling J_ll = {table[zero]} must vanish")
        for k, v in table.items():
            mirror = tuple(-c for c in k)
            if table.get(mirror, 0.0) != v:
                diagnostics.append(f"couplings not symmetric: J{k} = {v} but J{mirror} = {table.get(mirror, 0.0)}")
                break
    try:
        jz = j_hat_zero(spec)
    except DivergentSumError as exc:
        jz = math.inf
        diagnostics.append(f"interaction norm is infinite: {exc}")
    return ValidationReport(not diagnostics, lower, upper, jz, tuple(diagnostics))
