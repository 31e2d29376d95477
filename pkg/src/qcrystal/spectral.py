"""One-site Schrödinger problems and their thermal spectral sums.

The operator is ``-(1/2m) d^2/dx^2 + (a/2) x^2 + V(x)`` on ``[-x_max, x_max]``.
The default discretization is the sinc discrete-variable representation
(DVR) on a uniform grid, whose eigenvalues converge exponentially in the
grid spacing. Second-order finite differences are available with
``method="fd"``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import ConvergenceError, ModelError, PreconditionError, TruncationError
from .model import Potential

__all__ = [
    "SchrodingerProblem",
    "SpectralDecomposition",
    "GapReport",
    "solve_schrodinger",
    "spectral_gap",
    "upp_correlator_integral",
    "low_variance",
    "matsubara_two_point",
]

BOLTZMANN_CUTOFF = 1e-14


@dataclass(frozen=True)
class SchrodingerProblem:
    """Discretized one-site problem.

    Parameters
    ----------
    mass, rigidity : float
        ``m`` and ``a``.
    potential : Potential
        Anharmonic part. Its even coefficients are the polynomial
        ``v(t) = sum_s b_s t^s`` in ``t = x^2``.
    x_max : float, optional
        Half-width of the domain. By default it is grown until the total
        potential at both ends exceeds ``E[n_keep]`` by ``boundary_margin``.
    n_points : int
        Number of grid points.
    n_keep : int
        Number of levels reported and trusted.
    """

    mass: float
    rigidity: float
    potential: Potential = field(default_factory=Potential)
    x_max: float | None = None
    n_points: int = 200
    n_keep: int = 64
    method: str = "dvr"
    boundary_margin: float = 25.0

    def __post_init__(self):
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise ModelError("mass must be positive")
        if not math.isfinite(self.rigidity):
            raise ModelError("rigidity must be finite")
        if self.method not in ("dvr", "fd"):
            raise ModelError(f"unknown discretization {self.method!r}")
        if self.n_keep < 2 or self.n_points <= self.n_keep:
            raise ModelError("need 2 <= n_keep < n_points")
        p = self.potential
        leading = p.even_coeffs[-1] if p.r >= 2 else self.rigidity / 2 + (p.even_coeffs[0] if p.r else 0.0)
        if not leading > 0:
            raise ModelError("potential is not confining")

    @classmethod
    def from_v(cls, mass, rigidity, v_coeffs, **kwargs) -> "SchrodingerProblem":
        """Build from the coefficients of ``v(t) = c_1 t + c_2 t^2 + ...``."""
        return cls(mass, rigidity, Potential(tuple(v_coeffs)), **kwargs)

    def total_potential(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.rigidity * x * x + self.potential(x)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of a discretized one-site operator.

    ``energies`` holds the ``n_keep`` trusted levels; ``all_energies``
    and ``vectors`` hold the full discrete spectrum, which the thermal
    sums use. ``vectors[:, n]`` is normalized in the grid inner product
    ``sum_i u_i v_i``; ``wavefunctions`` rescales to unit L2 norm.
    """

    energies: np.ndarray
    all_energies: np.ndarray
    vectors: np.ndarray
    x: np.ndarray
    spacing: float
    mass: float
    n_keep: int
    method: str
    hamiltonian: np.ndarray = field(repr=False, compare=False)

    @property
    def x_max(self) -> float:
        return float(self.x[-1])

    @property
    def wavefunctions(self) -> np.ndarray:
        return self.vectors / math.sqrt(self.spacing)

    def position_matrix(self) -> np.ndarray:
        """``(psi_n, x psi_n')`` over the full discrete basis."""
        return self.vectors.T @ (self.x[:, None] * self.vectors)

    def residuals(self) -> np.ndarray:
        """``||H psi_n - E_n psi_n||`` for the trusted levels."""
        V = self.vectors[:, : self.n_keep]
        return np.linalg.norm(self.hamiltonian @ V - V * self.energies, axis=0)


def _hamiltonian(problem: SchrodingerProblem, x: np.ndarray) -> np.ndarray:
    n = x.size
    h = x[1] - x[0]
    m = problem.mass
    if problem.method == "dvr":
        i = np.arange(n)
        diff = i[:, None] - i[None, :]
        off = np.where(diff == 0, 1, diff).astype(float)
        T = np.where(diff == 0, math.pi**2 / 3.0, 2.0 * (-1.0) ** np.abs(diff) / off**2)
        T = T / (2.0 * m * h * h)
    else:
        T = (np.diag(np.full(n, 2.0)) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)) / (2.0 * m * h * h)
    return T + np.diag(problem.total_potential(x))


def _grid(problem: SchrodingerProblem, x_max: float) -> np.ndarray:
    if problem.method == "dvr":
        return np.linspace(-x_max, x_max, problem.n_points)
    # Dirichlet nodes at +-x_max are excluded from the unknowns
    return np.linspace(-x_max, x_max, problem.n_points + 2)[1:-1]


def _eigh(H):
    try:
        return linalg.eigh(H)
    except linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc


def _edge_potential(problem, x_max):
    return float(min(problem.total_potential(x_max), problem.total_potential(-x_max)))


def _reach(problem, level, x_start):
    """Smallest x >= x_start with the potential at both ends above ``level``."""
    f = lambda x: _edge_potential(problem, x) - level
    lo, hi = x_start, max(x_start, 1e-3)
    while f(hi) < 0:
        lo, hi = hi, 2.0 * hi
        if hi > 1e8:
            raise ModelError("potential does not confine at any domain size")
    if f(lo) >= 0:
        return lo
    return optimize.brentq(f, lo, hi, xtol=1e-12, rtol=1e-12)


def _default_x_max(problem: SchrodingerProblem) -> float:
    probe = np.linspace(-50, 50, 20001)
    u_min = float(np.min(problem.total_potential(probe)))
    x = _reach(problem, u_min + problem.boundary_margin, 0.0)
    # fixed-point iteration; a box that is too small overestimates E, so
    # the iterate may overshoot once and then settles from above
    for _ in range(100):
        E = np.linalg.eigvalsh(_hamiltonian(problem, _grid(problem, x)))
        need = E[problem.n_keep] + problem.boundary_margin
        x_new = _reach(problem, need, 0.0)
        if _edge_potential(problem, x) >= need and x_new >= 0.999 * x:
            return x
        x = 1.0005 * x_new
    raise ConvergenceError("could not size the domain")


def solve_schrodinger(problem: SchrodingerProblem) -> SpectralDecomposition:
    """Diagonalize the discretized one-site operator.

    Raises
    ------
    TruncationError
        If the ground state has weight above 1e-8 in the outer 5% of
        the domain, or the grid cannot resolve the trusted levels.
    ConvergenceError
        If the eigensolver fails or the computed spectrum is degenerate.
    """
    x_max = problem.x_max if problem.x_max is not None else _default_x_max(problem)
    x = _grid(problem, x_max)
    H = _hamiltonian(problem, x)
    E, vecs = _eigh(H)
    k = problem.n_keep
    if np.any(np.diff(E[:k]) <= 0):
        raise ConvergenceError("computed spectrum is numerically degenerate")
    outer = np.abs(x) > 0.95 * x_max
    if float(np.sum(vecs[outer, 0] ** 2)) > 1e-8:
        raise TruncationError(f"domain [-{x_max}, {x_max}] too small: ground state reaches the boundary")
    h = x[1] - x[0]
    u_min = float(np.min(problem.total_potential(x)))
    p_top = math.sqrt(max(2.0 * problem.mass * (E[k - 1] - u_min), 0.0))
    if problem.method == "dvr" and p_top > 0 and math.pi / h < 1.5 * p_top:
        raise TruncationError(
            f"grid spacing {h:.3g} cannot resolve level {k - 1}; increase n_points or decrease n_keep"
        )
    return SpectralDecomposition(
        energies=E[:k].copy(),
        all_energies=E,
        vectors=vecs,
        x=x,
        spacing=h,
        mass=problem.mass,
        n_keep=k,
        method=problem.method,
        hamiltonian=H,
    )


@dataclass(frozen=True)
class GapReport:
    """Minimal spacing ``E_n - E_(n-1)`` among the trusted levels."""

    value: float
    index: int
    at_truncation_edge: bool
    gaps: np.ndarray = field(repr=False, compare=False)

    def __float__(self):
        return self.value


def spectral_gap(dec: SpectralDecomposition, min_levels: int = 10) -> GapReport:
    if dec.n_keep < min_levels:
        raise PreconditionError(f"need at least {min_levels} levels for a gap, have {dec.n_keep}")
    gaps = np.diff(dec.energies)
    i = int(np.argmin(gaps))
    return GapReport(float(gaps[i]), i + 1, i + 1 == dec.n_keep - 1, gaps)


def _boltzmann(dec: SpectralDecomposition, beta: float) -> np.ndarray:
    if not beta > 0:
        raise PreconditionError("beta must be positive")
    w = np.exp(-beta * (dec.all_energies - dec.all_energies[0]))
    tail = w[dec.n_keep - 1] / np.sum(w)
    if tail > BOLTZMANN_CUTOFF:
        raise TruncationError(
            f"Boltzmann weight {tail:.2e} of level {dec.n_keep - 1} exceeds {BOLTZMANN_CUTOFF:g}; "
            "increase n_keep for this beta"
        )
    return w


def upp_correlator_integral(dec: SpectralDecomposition, beta: float, mass: float | None = None) -> float:
    """Integrated imaginary-time correlator ``int_0^beta <x(0) x(tau)> dtau``.

    Spectral double sum over ``n != n'`` of
    ``|x_nn'|^2 (e^{-beta E_n'} - e^{-beta E_n}) / (E_n - E_n')``
    normalized by the partition function. It is bounded by
    ``1/(m Delta^2)`` with equality for an equally spaced spectrum.
    ``mass`` is accepted for symmetry with the bound but not needed.
    """
    w = _boltzmann(dec, beta)
    E = dec.all_energies
    X2 = dec.position_matrix() ** 2
    gap = np.abs(E[:, None] - E[None, :])
    lower = np.maximum(w[:, None], w[None, :])
    with np.errstate(invalid="ignore", divide="ignore"):
        # (w_n' - w_n)/(E_n - E_n') = w_lower (1 - e^{-beta |dE|}) / |dE|
        kern = -lower * np.expm1(-beta * gap) / gap
    np.fill_diagonal(kern, 0.0)
    return float(np.sum(X2 * kern) / np.sum(w))


def low_variance(dec: SpectralDecomposition, beta: float) -> float:
    """Thermal expectation ``<x^2>`` of the one-site operator."""
    w = _boltzmann(dec, beta)
    x2 = np.einsum("in,i,in->n", dec.vectors, dec.x**2, dec.vectors)
    return float(np.dot(w, x2) / np.sum(w))


def matsubara_two_point(dec: SpectralDecomposition, beta: float, tau) -> np.ndarray | float:
    """Imaginary-time correlator ``<x(0) x(tau)>`` for ``0 <= tau <= beta``.

    ``(1/Z) sum_{n,n'} |x_nn'|^2 e^{-(beta - tau) E_n} e^{-tau E_n'}``.
    Accepts a scalar or an array of times.
    """
    taus = np.asarray(tau, dtype=float)
    if np.any(taus < 0) or np.any(taus > beta):
        raise PreconditionError("tau must lie in [0, beta]")
    w = _boltzmann(dec, beta)
    e = dec.all_energies - dec.all_energies[0]
    X2 = dec.position_matrix() ** 2
    out = np.empty(taus.size)
    for i, t in enumerate(taus.ravel()):
        a = np.exp(-(beta - t) * e)
        b = np.exp(-t * e)
        out[i] = a @ X2 @ b
    out /= np.sum(w)
    return float(out[0]) if taus.ndim == 0 else out.reshape(taus.shape)
