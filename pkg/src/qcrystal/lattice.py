"""Time-sliced loop measures on finite boxes and their exact evaluation.

A box of ``n`` sites carries ``n * P`` slice variables ``x[l, tau]``. The
discrete action is

    S(x) = sum_{l,tau} [ m (x[l,tau+1] - x[l,tau])^2 / (2 eps)
                         + eps (a/2) x[l,tau]^2 + eps V_l(x[l,tau]) ]
           - (eps/2) sum_{l,l',tau} J[l,l'] x[l,tau] x[l',tau]
           - eps sum_{l,tau} b[l,tau] x[l,tau]

with ``eps = beta / P``, periodic in ``tau``, and ``b`` the field felt
from an external boundary configuration.

The exact oracle replaces each slice variable by a one-dimensional
quadrature and evaluates the resulting finite sum by transfer-matrix
contraction over slices. All partition functions are reported relative
to the free loop measure (``V = 0``, ``J = 0``, ``b = 0``), whose
Gaussian normalization is known in closed form, so a free instance gives
1 up to the quadrature error.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InstanceTooLarge, ModelError, PreconditionError
from .model import ModelSpec, Potential

__all__ = [
    "Box",
    "DiscreteAction",
    "QuadratureScheme",
    "Observable",
    "ExactOracle",
    "build_action",
    "build_periodic_action",
    "exact_partition",
    "exact_expectation",
    "direct_sum_expectation",
    "free_covariance",
    "free_covariance_spectrum",
]

DEFAULT_MAX_STATES = 4096


# ---------------------------------------------------------------------------
# boxes


@dataclass(frozen=True)
class Box:
    """Rectangular set of lattice sites.

    ``boundary`` is ``"zero"``, ``"external"`` (a configuration outside the
    box is supplied to :func:`build_action`) or ``"periodic"`` (torus).
    """

    shape: tuple
    origin: tuple
    boundary: str = "zero"

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        origin = tuple(int(o) for o in self.origin)
        if len(shape) != len(origin) or not shape or min(shape) < 1:
            raise ModelError("box shape and origin must be nonempty and of equal length")
        if self.boundary not in ("zero", "external", "periodic"):
            raise ModelError(f"unknown boundary kind {self.boundary!r}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def cube(cls, shape: Sequence[int], origin: Sequence[int] | None = None, boundary: str = "zero") -> "Box":
        shape = tuple(shape)
        return cls(shape, tuple(origin) if origin is not None else (0,) * len(shape), boundary)

    @classmethod
    def torus(cls, L: int, d: int) -> "Box":
        """``(-L, L]^d`` with periodic identification."""
        if L < 1:
            raise ModelError("torus half-width L must be >= 1")
        return cls((2 * L,) * d, (-L + 1,) * d, "periodic")

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def sites(self) -> tuple:
        """Sites in row-major order."""
        ranges = [range(o, o + s) for o, s in zip(self.origin, self.shape)]
        return tuple(itertools.product(*ranges))

    def __len__(self):
        return math.prod(self.shape)

    def __contains__(self, site) -> bool:
        return all(o <= c < o + s for c, o, s in zip(site, self.origin, self.shape))

    def index(self, site: Sequence[int]) -> int:
        if tuple(site) not in self:
            raise ModelError(f"site {tuple(site)} is not in the box")
        idx = 0
        for c, o, s in zip(site, self.origin, self.shape):
            idx = idx * s + (c - o)
        return idx

    def wrap(self, site: Sequence[int]) -> tuple:
        return tuple(o + (c - o) % s for c, o, s in zip(site, self.origin, self.shape))


# ---------------------------------------------------------------------------
# action


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteAction:
    """Trotterized energy of a finite box.

    Attributes
    ----------
    coupling : (n, n) array
        Symmetric couplings inside the box (torus images included).
    boundary_field : (n, P) array
        ``b[l, tau] = sum_{l' outside} J[l, l'] xi[l', tau]``.
    even_coeffs : (n, r) array
        Per-site potential coefficients of ``x^2, ..., x^(2r)``.
    fields : (n,) array
        Per-site external field ``h``.
    """

    P: int
    beta: float
    mass: float
    rigidity: float
    sites: tuple
    coupling: np.ndarray
    boundary_field: np.ndarray
    even_coeffs: np.ndarray
    fields: np.ndarray
    box: Box | None = None

    def __post_init__(self):
        if int(self.P) != self.P or self.P < 2:
            raise PreconditionError("at least two time slices are required")
        n = len(self.sites)
        J = _frozen(self.coupling)
        if J.shape != (n, n) or not np.allclose(J, J.T, rtol=0, atol=0) or np.any(np.diag(J) != 0):
            raise ModelError("coupling matrix must be symmetric with zero diagonal")
        b = _frozen(self.boundary_field)
        if b.shape != (n, self.P):
            raise ModelError("boundary field must have shape (n_sites, P)")
        c = _frozen(self.even_coeffs).reshape(n, -1)
        c.setflags(write=False)
        f = _frozen(self.fields)
        for arr in (J, b, c, f):
            if not np.all(np.isfinite(arr)):
                raise ModelError("action parameters must be finite")
        object.__setattr__(self, "coupling", J)
        object.__setattr__(self, "boundary_field", b)
        object.__setattr__(self, "even_coeffs", c)
        object.__setattr__(self, "fields", f)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def epsilon(self) -> float:
        return self.beta / self.P

    @property
    def kinetic_coefficient(self) -> float:
        return self.mass / (2.0 * self.epsilon)

    @property
    def time_homogeneous(self) -> bool:
        b = self.boundary_field
        return bool(np.all(b == b[:, :1]))

    @property
    def is_ferromagnetic(self) -> bool:
        return bool(np.all(self.coupling >= 0))

    @property
    def is_even(self) -> bool:
        return bool(np.all(self.fields == 0) and np.all(self.boundary_field == 0))

    def potential(self, site: int) -> Potential:
        return Potential(tuple(self.even_coeffs[site]), float(self.fields[site]))

    def site_energy(self, site: int, x):
        """``(a/2) x^2 + V_l(x)`` evaluated elementwise."""
        x = np.asarray(x, dtype=float)
        t = x * x
        out = np.zeros_like(t)
        for c in self.even_coeffs[site][::-1]:
            out = (out + c) * t
        return out + 0.5 * self.rigidity * t - self.fields[site] * x

    def index(self, site: Sequence[int]) -> int:
        return self.sites.index(tuple(site))

    def __call__(self, x) -> np.ndarray:
        """Action of configurations ``x`` with shape ``(..., n_sites, P)``."""
        x = np.asarray(x, dtype=float)
        eps = self.epsilon
        kin = self.kinetic_coefficient * np.sum((np.roll(x, -1, axis=-1) - x) ** 2, axis=(-2, -1))
        pot = sum(np.sum(self.site_energy(i, x[..., i, :]), axis=-1) for i in range(self.n_sites))
        inter = np.einsum("...it,ij,...jt->...", x, self.coupling, x)
        field_term = np.sum(self.boundary_field * x, axis=(-2, -1))
        return kin + eps * pot - 0.5 * eps * inter - eps * field_term

    def with_field(self, h: float) -> "DiscreteAction":
        """Same action with the external field replaced by ``h`` on every site."""
        return _replace(self, fields=np.full(self.n_sites, float(h)))

    def with_coupling(self, coupling) -> "DiscreteAction":
        return _replace(self, coupling=np.asarray(coupling, dtype=float))

    def with_boundary_field(self, b) -> "DiscreteAction":
        return _replace(self, boundary_field=np.broadcast_to(np.asarray(b, dtype=float), (self.n_sites, self.P)))

    def free_reference(self) -> "DiscreteAction":
        n = self.n_sites
        return _replace(
            self,
            coupling=np.zeros((n, n)),
            boundary_field=np.zeros((n, self.P)),
            even_coeffs=np.zeros((n, 1)),
            fields=np.zeros(n),
        )

    def permuted(self, order: Sequence[int]) -> "DiscreteAction":
        """Relabel sites: new site ``i`` is old site ``order[i]``."""
        o = np.asarray(order)
        return _replace(
            self,
            sites=tuple(self.sites[i] for i in o),
            coupling=self.coupling[np.ix_(o, o)],
            boundary_field=self.boundary_field[o],
            even_coeffs=self.even_coeffs[o],
            fields=self.fields[o],
            box=None,
        )


def _replace(action: DiscreteAction, **changes) -> DiscreteAction:
    kw = dict(
        P=action.P,
        beta=action.beta,
        mass=action.mass,
        rigidity=action.rigidity,
        sites=action.sites,
        coupling=action.coupling,
        boundary_field=action.boundary_field,
        even_coeffs=action.even_coeffs,
        fields=action.fields,
        box=action.box,
    )
    kw.update(changes)
    return DiscreteAction(**kw)


def _site_coefficients(spec: ModelSpec, sites) -> tuple:
    pots = [spec.potential_at(s) for s in sites]
    r = max(1, max(p.r for p in pots))
    coeffs = np.zeros((len(sites), r))
    for i, p in enumerate(pots):
        coeffs[i, : p.r] = p.even_coeffs
    return coeffs, np.array([p.field for p in pots])


def _xi_series(value, P: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(P, float(arr))
    if arr.shape != (P,):
        raise ModelError(f"boundary loop must have {P} slices")
    return arr


def build_action(spec: ModelSpec, box: Box, P: int, xi: Mapping | None = None) -> DiscreteAction:
    """Discrete action of ``box`` at ``P`` slices.

    Parameters
    ----------
    xi : mapping, optional
        For ``box.boundary == "external"``: site outside the box ->
        constant value or length-``P`` loop. It must cover every site
        outside the box that couples to the box.

    Raises
    ------
    PreconditionError
        If a nonzero coupling reaches a site outside the box that ``xi``
        does not cover, or if the box is periodic (use
        :func:`build_periodic_action`).
    """
    if spec.nu != 1:
        raise PreconditionError("only scalar loops (nu = 1) are discretized")
    if box.d != spec.d:
        raise ModelError("box dimension does not match the model")
    if box.boundary == "periodic":
        raise PreconditionError("use build_periodic_action for periodic boxes")
    sites = box.sites
    n = len(sites)
    J = np.zeros((n, n))
    for i, s in enumerate(sites):
        for j in range(i + 1, n):
            J[i, j] = J[j, i] = spec.couplings.entry(s, sites[j])
    b = np.zeros((n, P))
    if box.boundary == "external":
        xi = {tuple(k): _xi_series(v, P) for k, v in (xi or {}).items()}
        for k in xi:
            if k in box:
                raise ModelError(f"boundary configuration given at interior site {k}")
        R = spec.couplings.range
        if math.isinf(R):
            raise PreconditionError("infinite-range couplings escape any finite boundary neighbourhood")
        for i, s in enumerate(sites):
            for delta, value in spec.couplings.offsets(spec.d, R):
                target = tuple(c + e for c, e in zip(s, delta))
                if target in box:
                    continue
                if target not in xi:
                    raise PreconditionError(f"coupling from {s} to {target} escapes the boundary configuration")
                b[i] += value * xi[target]
    elif xi:
        raise ModelError("a boundary configuration needs an external box")
    coeffs, fields = _site_coefficients(spec, sites)
    return DiscreteAction(P, spec.beta, spec.mass, spec.rigidity, sites, J, b, coeffs, fields, box)


def build_periodic_action(spec: ModelSpec, L: int, P: int) -> DiscreteAction:
    """Torus ``(-L, L]^d`` with nearest-neighbour couplings.

    Each site is coupled to its ``2d`` neighbours ``l +- e_j`` taken
    modulo the torus, counted with multiplicity: for ``L = 1`` the two
    neighbours along an axis coincide and the bond carries ``2J``.
    """
    if not spec.translation_invariant:
        raise PreconditionError("periodic boxes need a translation-invariant model")
    if spec.couplings.kind != "nearest_neighbor":
        raise PreconditionError("periodic boxes are built for nearest-neighbour couplings")
    if spec.nu != 1:
        raise PreconditionError("only scalar loops (nu = 1) are discretized")
    box = Box.torus(L, spec.d)
    sites = box.sites
    n = len(sites)
    J = np.zeros((n, n))
    for i, s in enumerate(sites):
        for axis in range(spec.d):
            for sgn in (1, -1):
                nb = list(s)
                nb[axis] += sgn
                J[i, box.index(box.wrap(nb))] += spec.couplings.J
    coeffs, fields = _site_coefficients(spec, sites)
    return DiscreteAction(P, spec.beta, spec.mass, spec.rigidity, sites, J, np.zeros((n, P)), coeffs, fields, box)


# ---------------------------------------------------------------------------
# free measure


def free_covariance(m: float, a: float, beta: float, P: int) -> np.ndarray:
    """Covariance of the slice variables of one free loop.

    The precision matrix is ``(m/eps)(2 - shift - shift^T) + eps a``.
    """
    if int(P) != P or P < 2:
        raise PreconditionError("P >= 2 required")
    if not (m > 0 and a > 0 and beta > 0):
        raise ModelError("m, a, beta must be positive")
    eps = beta / P
    shift = np.roll(np.eye(P), 1, axis=1)
    prec = (m / eps) * (2 * np.eye(P) - shift - shift.T) + eps * a * np.eye(P)
    return np.linalg.inv(prec)


def free_covariance_spectrum(m: float, a: float, beta: float, P: int) -> np.ndarray:
    """Covariance eigenvalues in units of the continuum operator, by Matsubara index.

    Entry ``k`` (``k = 0..P-1``) converges to ``1 / (m (2 pi k / beta)^2 + a)``
    for fixed ``k`` as ``P`` grows.
    """
    eps = beta / P
    C = free_covariance(m, a, beta, P)
    k = np.arange(P)
    phases = np.exp(2j * np.pi * np.outer(k, np.arange(P)) / P)
    # C is circulant; its eigenvalue for mode k is sum_tau C[0, tau] e^{i 2 pi k tau / P}
    return eps * np.real(phases @ C[0])


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True, eq=False)
class QuadratureScheme:
    """Nodes and Lebesgue weights for one slice variable.

    ``sum_i weights[i] f(nodes[i])`` approximates ``int f(x) dx``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        weights = _frozen(self.weights)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ModelError("nodes and weights must be 1-D of equal length")
        if np.any(weights <= 0):
            raise ModelError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def q(self) -> int:
        return self.nodes.size

    @classmethod
    def uniform(cls, half_width: float, spacing: float) -> "QuadratureScheme":
        """Symmetric trapezoid grid ``0, +-h, +-2h, ...`` covering ``[-R, R]``."""
        k = int(math.ceil(half_width / spacing))
        nodes = spacing * np.arange(-k, k + 1)
        return cls(nodes, np.full(nodes.size, spacing), "uniform")

    @classmethod
    def gauss_hermite(cls, q: int, scale: float) -> "QuadratureScheme":
        """Gauss–Hermite rule for the weight ``exp(-x^2 / (2 scale^2))``, stored as Lebesgue weights."""
        t, w = np.polynomial.hermite.hermgauss(q)
        s = math.sqrt(2.0) * scale
        return cls(s * t, s * w * np.exp(t * t), "gauss_hermite")

    def gaussian_mass(self, scale: float) -> float:
        """``sum_i w_i exp(-x_i^2/(2 scale^2))``; equals ``sqrt(2 pi) scale`` for a good rule."""
        return float(np.sum(self.weights * np.exp(-self.nodes**2 / (2 * scale * scale))))

    @classmethod
    def for_action(cls, action: DiscreteAction, tail: float = 1e-18, spacing_factor: float = 0.75) -> "QuadratureScheme":
        """Uniform grid adapted to an action.

        The spacing is ``spacing_factor`` times the conditional width
        ``sqrt(eps / 2m)`` of a slice variable given its neighbours (and is
        reduced further if the one-slice potential factor is narrower).
        The trapezoid error then scales like ``exp(-2 pi^2 / spacing_factor^2)``. The half-width is
        where the one-site marginal density of a dominating single-site
        problem falls below ``tail`` times its maximum. The dominating
        problem lowers the rigidity by the absolute coupling row sum and
        turns fields into ``-|h| |x|``.
        """
        eps, m = action.epsilon, action.mass
        # conditional width of one slice variable given its neighbours
        width = math.sqrt(eps / (2.0 * m))
        rows = np.sum(np.abs(action.coupling), axis=1)
        pull = np.abs(action.fields) + np.max(np.abs(action.boundary_field), axis=1)
        R, spacing = 0.0, spacing_factor * width
        for i in range(action.n_sites):
            coeffs = action.even_coeffs[i]
            quad_part = 0.5 * (action.rigidity - rows[i]) + coeffs[0]
            if np.all(coeffs[1:] <= 0) and not quad_part > 0:
                raise ModelError("instance is not normalizable: coupling overwhelms the confinement")
            Ri, hi = _marginal_extent(action, coeffs, rows[i], pull[i], spacing, tail, spacing_factor)
            R, spacing = max(R, Ri), min(spacing, hi)
        return cls.uniform(R, spacing)


def _envelope_energy(action, coeffs, row, pull, x):
    t = x * x
    out = np.zeros_like(t)
    for c in coeffs[::-1]:
        out = (out + c) * t
    return out + 0.5 * (action.rigidity - row) * t - pull * np.abs(x)


def _marginal_extent(action, coeffs, row, pull, spacing, tail, factor=0.75):
    """Half-width where the single-slice marginal of the dominating one-site chain is negligible.

    The spacing is also checked against the conditional width
    ``(2m/eps + eps V'')^(-1/2)`` of a slice variable inside that range.
    """
    eps, m, P = action.epsilon, action.mass, action.P
    R = 4.0 * spacing
    for _ in range(80):
        k = int(math.ceil(R / spacing))
        x = spacing * np.arange(-k, k + 1)
        u = eps * _envelope_energy(action, coeffs, row, pull, x)
        u -= u.min()
        half = np.exp(-0.5 * u)
        K = np.exp(-m * (x[:, None] - x[None, :]) ** 2 / (2 * eps))
        T = half[:, None] * K * half[None, :]
        # positive matrix products keep every entry to full relative precision
        dens = np.diag(_positive_power(T, P))
        dens = dens / dens.max()
        if dens[0] >= tail or dens[-1] >= tail or x.size <= 8:
            R *= 1.5
            continue
        inside = np.nonzero(dens >= tail)[0]
        ext = max(abs(x[inside[0]]), abs(x[inside[-1]])) + spacing
        # the local trapezoid error ~ exp(-2 pi^2 / (h^2 prec)) only matters
        # in proportion to the density there
        curv = np.gradient(np.gradient(_envelope_energy(action, coeffs, row, pull, x), x), x)
        prec = 2.0 * m / eps + eps * np.maximum(curv, 0.0)
        logr = np.log(np.maximum(dens, 1e-300)) - math.log(1e-16)
        ok = logr > 0
        scale = math.log(1e16)
        need = float(np.min(factor / np.sqrt(prec[ok]) * np.sqrt(scale / np.maximum(logr[ok], 1e-3))))
        if spacing > need * 1.0001:
            spacing = need
            continue
        return ext, spacing
    raise ModelError("could not bound the one-site marginal")  # pragma: no cover


def _positive_power(T: np.ndarray, P: int) -> np.ndarray:
    out, base = None, T / T.max()
    while P:
        if P & 1:
            out = base if out is None else out @ base
            out = out / out.max()
        P >>= 1
        if P:
            base = base @ base
            base = base / base.max()
    return out


# ---------------------------------------------------------------------------
# observables


@dataclass(frozen=True)
class Observable:
    """Linear combination of products of one-variable functions.

    Each term is ``(coef, factors)`` with factors ``(site, slice, f)``,
    where ``f`` is an integer power or a vectorized callable. Sites are
    integer positions in the action's site order.
    """

    terms: tuple = ()

    @classmethod
    def const(cls, c: float) -> "Observable":
        return cls(((float(c), ()),))

    @classmethod
    def x(cls, site: int, tau: int, power: int = 1) -> "Observable":
        return cls(((1.0, ((int(site), int(tau), int(power)),)),))

    @classmethod
    def fn(cls, site: int, tau: int, f: Callable) -> "Observable":
        return cls(((1.0, ((int(site), int(tau), f),)),))

    @classmethod
    def monomial(cls, pairs: Iterable) -> "Observable":
        return cls(((1.0, tuple((int(s), int(t), 1) for s, t in pairs)),))

    @classmethod
    def total(cls, n_sites: int, P: int, weight: float = 1.0) -> "Observable":
        """``weight * sum_{l,tau} x[l,tau]``."""
        return cls(tuple((float(weight), ((i, t, 1),)) for i in range(n_sites) for t in range(P)))

    def __add__(self, other):
        other = _as_obs(other)
        return Observable(self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_as_obs(other))

    def __rsub__(self, other):
        return _as_obs(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Observable(tuple((c * float(other), f) for c, f in self.terms))
        other = _as_obs(other)
        return Observable(tuple((c1 * c2, f1 + f2) for c1, f1 in self.terms for c2, f2 in other.terms))

    __rmul__ = __mul__

    def slices(self) -> set:
        return {t for _, fs in self.terms for _, t, _ in fs}

    def max_slice(self) -> int:
        return max(self.slices(), default=-1)

    def max_site(self) -> int:
        return max((s for _, fs in self.terms for s, _, _ in fs), default=-1)

    def __call__(self, config) -> np.ndarray:
        """Evaluate on configurations of shape ``(..., n_sites, P)``."""
        config = np.asarray(config, dtype=float)
        out = np.zeros(config.shape[:-2])
        for c, factors in self.terms:
            term = np.full(config.shape[:-2], c)
            for s, t, f in factors:
                term = term * _apply(f, config[..., s, t])
            out = out + term
        return out

    def monomial_terms(self):
        """Terms as ``(coef, [(site, slice), ...])`` if every factor is a power."""
        out = []
        for c, factors in self.terms:
            flat = []
            for s, t, f in factors:
                if not isinstance(f, (int, np.integer)) or f < 0:
                    return None
                flat.extend([(s, t)] * int(f))
            out.append((c, flat))
        return out


def _as_obs(v) -> Observable:
    if isinstance(v, Observable):
        return v
    if isinstance(v, (int, float, np.floating, np.integer)):
        return Observable.const(float(v))
    raise TypeError(f"cannot combine Observable with {type(v).__name__}")


def _apply(f, x):
    if isinstance(f, (int, np.integer)):
        return x ** int(f)
    return np.asarray(f(x), dtype=float)


# ---------------------------------------------------------------------------
# exact oracle


class ExactOracle:
    """Transfer-matrix evaluation of the quadrature sum for one action.

    With ``N = q^n`` joint states per slice, the slice-to-slice operator
    is ``diag(d_tau) K`` where ``d_tau`` collects weights, on-site and
    coupling energies and ``K`` is the product of one-site kinetic
    kernels, applied site by site. Products between the slices an
    observable touches are cached.
    """

    def __init__(self, action: DiscreteAction, quad: QuadratureScheme | None = None,
                 max_states: int = DEFAULT_MAX_STATES):
        self.action = action
        self.quad = quad if quad is not None else QuadratureScheme.for_action(action)
        n, q = action.n_sites, self.quad.q
        self.n, self.q = n, q
        self.N = q**n
        if self.N > max_states:
            raise InstanceTooLarge(
                f"{q} nodes per variable on {n} sites gives q^n = {self.N} joint states (limit {max_states})"
            )
        x = self.quad.nodes
        eps = action.epsilon
        self.kernel = np.exp(-action.mass * (x[:, None] - x[None, :]) ** 2 / (2 * eps))
        grids = np.meshgrid(*([x] * n), indexing="ij")
        self.coords = np.stack([g.ravel() for g in grids])  # (n, N)
        logw = np.log(self.quad.weights)
        base = np.zeros(self.N)
        for i in range(n):
            base += logw[self._axis_index(i)] - eps * action.site_energy(i, self.coords[i])
        base += 0.5 * eps * np.einsum("in,ij,jn->n", self.coords, action.coupling, self.coords)
        self._log_diag = [base + eps * (action.boundary_field[:, t] @ self.coords) for t in range(action.P)]
        self._segments = {}
        self._log_free = n * self._single_site_free_log()
        self._log_raw_z = None
        self._full_kernel = None

    def _axis_index(self, i):
        idx = np.indices((self.q,) * self.n).reshape(self.n, -1)
        return idx[i]

    def _single_site_free_log(self) -> float:
        a = self.action
        return _log_free_loop(a.mass, a.rigidity, a.beta, a.P)

    def _apply_kernel(self, M: np.ndarray) -> np.ndarray:
        if self.n == 1:
            return self.kernel @ M
        cols = M.shape[1]
        T = M.reshape((self.q,) * self.n + (cols,))
        for ax in range(self.n):
            T = np.moveaxis(np.tensordot(self.kernel, T, axes=([1], [ax])), 0, ax)
        return T.reshape(self.N, cols)

    def _segment(self, start: int, stop: int):
        """``prod_{tau=start}^{stop-1} diag(d_tau) K`` (cyclic) as ``(matrix, log_scale)``."""
        P = self.action.P
        key = (start % P, stop - start)
        if self.action.time_homogeneous:
            key = (0, stop - start)
        if key in self._segments:
            return self._segments[key]
        B = np.eye(self.N)
        log_scale = 0.0
        for tau in range(stop - 1, start - 1, -1):
            ld = self._log_diag[tau % P]
            shift = ld.max()
            B = np.exp(ld - shift)[:, None] * self._apply_kernel(B)
            s = np.abs(B).max()
            B /= s
            log_scale += shift + math.log(s)
        if len(self._segments) > 6:
            self._segments.clear()
        self._segments[key] = (B, log_scale)
        return B, log_scale

    def _chain(self, slices: Sequence[int]):
        P = self.action.P
        pts = sorted(set(int(t) % P for t in slices)) or [0]
        segs = []
        for j, t in enumerate(pts):
            nxt = pts[j + 1] if j + 1 < len(pts) else pts[0] + P
            segs.append(self._segment(t, nxt))
        return pts, segs

    def _trace(self, pts, segs, F: dict | None = None):
        """``tr prod_j diag(F_j) seg_j`` with its log scale (sign-aware)."""
        F = F or {}
        log_scale = sum(s for _, s in segs)
        vecs = [F.get(t) for t in pts]
        if len(segs) == 1:
            B = segs[0][0]
            diag = np.diag(B)
            val = float(np.dot(vecs[0], diag)) if vecs[0] is not None else float(np.sum(diag))
            return val, log_scale
        if len(segs) == 2:
            A, B = segs[0][0], segs[1][0]
            M = A * B.T
            u = vecs[0] if vecs[0] is not None else np.ones(self.N)
            v = vecs[1] if vecs[1] is not None else np.ones(self.N)
            return float(u @ M @ v), log_scale
        # tr(X Y) as a Hadamard sum saves the closing product
        C = segs[0][0] if vecs[0] is None else vecs[0][:, None] * segs[0][0]
        for v, (B, _) in zip(vecs[1:-1], segs[1:-1]):
            C = (C if v is None else C * v[None, :]) @ B
            s = np.abs(C).max()
            C /= s
            log_scale += math.log(s)
        last = segs[-1][0] if vecs[-1] is None else vecs[-1][:, None] * segs[-1][0]
        return float(np.sum(C * last.T)), log_scale

    def _log_raw(self) -> float:
        if self._log_raw_z is None:
            pts, segs = self._chain([0])
            val, ls = self._trace(pts, segs)
            self._log_raw_z = math.log(val) + ls
        return self._log_raw_z

    def log_partition(self) -> float:
        """``log Z`` relative to the free loop measure."""
        return self._log_raw() - self._log_free

    def partition(self) -> float:
        return math.exp(self.log_partition())

    def _slice_vectors(self, factors) -> dict:
        F = {}
        for s, t, f in factors:
            if not 0 <= s < self.n:
                raise ModelError(f"observable refers to site {s} outside the box")
            if not 0 <= t < self.action.P:
                raise ModelError(f"observable refers to slice {t} outside 0..{self.action.P - 1}")
            vals = _apply(f, self.coords[s])
            F[t] = F[t] * vals if t in F else vals
        return F

    def expectation(self, observable: Observable) -> float:
        """Normalized Gibbs expectation of a product-form observable."""
        total = 0.0
        for coef, factors in observable.terms:
            if not factors:
                total += coef
                continue
            F = self._slice_vectors(factors)
            pts, segs = self._chain(list(F))
            val, ls = self._trace(pts, segs, F)
            # every chain of segments multiplies out to the same cycle product
            total += coef * val * math.exp(ls - self._log_raw())
        return float(total)

    def expectations(self, observables: Iterable[Observable]) -> np.ndarray:
        return np.array([self.expectation(o) for o in observables])

    def tilted_partition(self, lam, weights=None) -> np.ndarray:
        """``Z(lam) / Z(0)`` for ``Z(lam) = <exp(lam * sum eps x)>``, complex ``lam`` allowed.

        ``weights`` (length n) replaces the uniform site weights of the
        sum. Values are returned as ``exp(log)`` of complex numbers.
        """
        lam = np.atleast_1d(np.asarray(lam, dtype=complex))
        a = self.action
        w = np.ones(self.n) if weights is None else np.asarray(weights, dtype=float)
        s = a.epsilon * (w @ self.coords)
        out = np.empty(lam.size, dtype=complex)
        if self._full_kernel is None:
            self._full_kernel = self._apply_kernel(np.eye(self.N))
        K = self._full_kernel
        base_pts, base_segs = self._chain([0])
        z0, z0s = self._trace(base_pts, base_segs)
        logz0 = math.log(z0) + z0s
        P = a.P
        for i, l in enumerate(lam):
            # tr prod_tau diag(d_tau) K, built right to left; the last factor closes the trace
            diags = []
            log_scale = 0.0
            for tau in range(P):
                ld = self._log_diag[tau]
                shift = ld.max()
                diags.append(np.exp(ld - shift + l * s))
                log_scale += shift
            B = diags[P - 1][:, None] * K
            for tau in range(P - 2, 0, -1):
                B = diags[tau][:, None] * self._apply_kernel(B)
                sc = np.abs(B).max()
                B /= sc
                log_scale += math.log(sc)
            val = np.sum((diags[0][:, None] * K) * B.T) if P > 1 else np.trace(B)
            out[i] = np.exp(np.log(val) + log_scale - logz0)
        return out


def _log_free_loop(m: float, a: float, beta: float, P: int) -> float:
    """``log int exp(-S_free) dx`` over one loop of ``P`` slice variables (Gaussian, exact)."""
    eps = beta / P
    k = np.arange(P)
    # eigenvalues of the circulant precision matrix
    lam = (2.0 * m / eps) * (1.0 - np.cos(2.0 * np.pi * k / P)) + eps * a
    return float(0.5 * P * math.log(2.0 * math.pi) - 0.5 * np.sum(np.log(lam)))


def exact_partition(action: DiscreteAction, quad: QuadratureScheme | None = None,
                    max_states: int = DEFAULT_MAX_STATES) -> float:
    """Normalized partition function of the discretized local Gibbs kernel.

    Raises
    ------
    InstanceTooLarge
        If ``q^n`` exceeds ``max_states``.
    """
    return ExactOracle(action, quad, max_states).partition()


def exact_expectation(action: DiscreteAction, observable, quad: QuadratureScheme | None = None,
                      max_states: int = DEFAULT_MAX_STATES):
    """Normalized expectation of an observable (or list of observables).

    Product-form :class:`Observable` instances use the transfer-matrix
    oracle. A plain callable on configurations of shape ``(..., n, P)``
    is summed over all ``q^(nP)`` quadrature configurations, which is
    only feasible for tiny instances.
    """
    if callable(observable) and not isinstance(observable, Observable):
        return direct_sum_expectation(action, observable, quad)
    oracle = ExactOracle(action, quad, max_states)
    if isinstance(observable, Observable):
        return oracle.expectation(observable)
    return oracle.expectations(observable)


def direct_sum_expectation(action: DiscreteAction, fn: Callable | None, quad: QuadratureScheme | None = None,
                           max_configs: int = 20_000_000, chunk: int = 200_000):
    """Expectation by explicit enumeration of every quadrature configuration.

    With ``fn=None`` returns the normalized partition function instead.
    Independent of the transfer-matrix code path.
    """
    quad = quad if quad is not None else QuadratureScheme.for_action(action)
    n, P, q = action.n_sites, action.P, quad.q
    total_vars = n * P
    count = q**total_vars
    if count > max_configs:
        raise InstanceTooLarge(f"q^(nP) = {q}^{total_vars} = {count} configurations (limit {max_configs})")
    logw = np.log(quad.weights)
    num = den = 0.0
    shift = None
    for start in range(0, count, chunk):
        idx = np.arange(start, min(count, start + chunk))
        digits = np.empty((idx.size, total_vars), dtype=np.int64)
        rem = idx.copy()
        for v in range(total_vars - 1, -1, -1):
            digits[:, v] = rem % q
            rem //= q
        cfg = quad.nodes[digits].reshape(-1, n, P)
        logp = logw[digits].sum(axis=1) - action(cfg)
        if shift is None:
            shift = float(logp.max())
        p = np.exp(logp - shift)
        den += float(np.sum(p))
        if fn is not None:
            num += float(np.sum(p * np.asarray(fn(cfg), dtype=float)))
    if fn is not None:
        return num / den
    log_free = n * _log_free_loop(action.mass, action.rigidity, action.beta, P)
    return math.exp(shift + math.log(den) - log_free)
