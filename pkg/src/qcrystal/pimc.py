"""Path-integral Metropolis sampling of time-sliced loop measures.

Each chain alternates single-slice moves with rigid shifts of a whole
loop. Proposal widths are tuned toward a target acceptance during
burn-in and frozen afterwards. Chains draw from independent Philox
streams keyed by ``(master_seed, chain_index)`` and are merged in chain
order, so results do not depend on how chains are scheduled.

Recorded observables are monomials in the slice variables, keyed by the
sorted tuple of their ``(site, slice)`` factors, plus three block
observables that are always present:

``"block_m2"``
    squared block magnetization averaged over slices,
``"block_m2_slice0"``
    squared block magnetization at slice 0,
``"x2_mean"``
    mean of ``x^2`` over sites and slices.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import MissingObservableError, PreconditionError, SamplerDiagnosticError
from .lattice import Box, DiscreteAction

__all__ = [
    "McParams",
    "Estimate",
    "ChainSummary",
    "ChainStats",
    "sample_chain",
    "run_chains",
    "monomial_key",
    "pair_monomials",
    "ursell_monomials",
    "default_monomials",
    "effective_sample_size",
    "estimate_mean",
    "estimate_order_parameter",
    "estimate_pair_correlation",
    "estimate_ursell",
]

SPECIAL_KEYS = ("block_m2", "block_m2_slice0", "x2_mean")
ACCEPTANCE_RANGE = (0.05, 0.95)
_ADAPT_BATCH = 20
_BLOCK_SWEEPS = 4096
_NO_UNIFORMS = np.zeros(0)


@dataclass(frozen=True)
class McParams:
    """Sampler settings.

    Attributes
    ----------
    proposal_width : tuple
        Initial widths of single-slice and loop-shift proposals.
    update_mix : float
        Probability that an attempt is a single-slice move.
    cluster_moves : int
        Cluster reflections ``x -> -x`` of whole site loops attempted after
        each sweep. Zero by default. They let ordered chains leave
        mixed-sign domain states that local moves cannot dissolve.
    n_blocks : int
        Batches per chain used for batch-means errors.
    trace_stride : int
        Keep every ``trace_stride``-th recorded sweep (0 keeps none).
    """

    n_sweeps: int = 20000
    n_burnin: int = 2000
    n_chains: int = 8
    master_seed: int = 0
    proposal_width: tuple = (0.5, 0.5)
    update_mix: float = 0.8
    cluster_moves: int = 0
    target_acceptance: float = 0.4
    n_blocks: int = 16
    trace_stride: int = 0

    def __post_init__(self):
        if self.n_sweeps < self.n_blocks or self.n_blocks < 2:
            raise PreconditionError("need at least two blocks with one sweep each")
        if self.n_burnin < 0 or self.n_chains < 1:
            raise PreconditionError("n_burnin must be >= 0 and n_chains >= 1")
        if not 0.0 < self.update_mix <= 1.0:
            raise PreconditionError("update_mix must lie in (0, 1]")
        if self.cluster_moves < 0:
            raise PreconditionError("cluster_moves must be nonnegative")
        w = tuple(float(v) for v in self.proposal_width)
        if len(w) != 2 or min(w) <= 0 or not all(map(math.isfinite, w)):
            raise PreconditionError("proposal_width must be two positive numbers")
        if not 0.0 < self.target_acceptance < 1.0:
            raise PreconditionError("target_acceptance must lie in (0, 1)")
        if self.master_seed < 0:
            raise PreconditionError("master_seed must be nonnegative")
        object.__setattr__(self, "proposal_width", w)


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float
    n_chains: int
    method: str = "mean"

    def __iter__(self):
        yield self.value
        yield self.error

    def to_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "n_chains": self.n_chains, "method": self.method}


@dataclass(frozen=True, eq=False)
class ChainSummary:
    """Per-chain sufficient statistics, one column per observable."""

    chain_index: int
    n: int
    sums: np.ndarray
    sumsq: np.ndarray
    block_means: np.ndarray
    ess: np.ndarray
    acceptance: tuple
    widths: tuple
    trace: np.ndarray | None = None

    @property
    def means(self) -> np.ndarray:
        return self.sums / self.n


@dataclass(frozen=True, eq=False)
class ChainStats:
    """Collection of chain summaries sharing an observable layout."""

    keys: tuple
    chains: tuple
    n_sites: int
    P: int
    periodic: bool = False

    def __post_init__(self):
        idx = [c.chain_index for c in self.chains]
        if len(set(idx)) != len(idx):
            raise PreconditionError("chain indices must be distinct")
        object.__setattr__(self, "chains", tuple(sorted(self.chains, key=lambda c: c.chain_index)))

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    @property
    def n_samples(self) -> int:
        return sum(c.n for c in self.chains)

    def merge(self, other: "ChainStats") -> "ChainStats":
        if (self.keys, self.n_sites, self.P, self.periodic) != (other.keys, other.n_sites, other.P, other.periodic):
            raise PreconditionError("cannot merge statistics with different layouts")
        return ChainStats(self.keys, self.chains + other.chains, self.n_sites, self.P, self.periodic)

    __or__ = merge

    def column(self, key) -> int:
        key = _normalize_key(key)
        try:
            return self.keys.index(key)
        except ValueError:
            raise MissingObservableError(f"observable {key!r} was not recorded") from None

    def has(self, key) -> bool:
        return _normalize_key(key) in self.keys

    def ess(self, key) -> float:
        j = self.column(key)
        return float(sum(c.ess[j] for c in self.chains))

    def acceptance(self) -> np.ndarray:
        """Per-chain ``(single, shift)`` acceptance rates."""
        return np.array([c.acceptance for c in self.chains])


def monomial_key(pairs: Iterable) -> tuple:
    return tuple(sorted((int(s), int(t)) for s, t in pairs))


def _normalize_key(key):
    if isinstance(key, str):
        return key
    return monomial_key(key)


def pair_monomials(a: tuple, b: tuple) -> list:
    """Monomials needed for the connected correlator of slice variables ``a`` and ``b``."""
    return [monomial_key([a]), monomial_key([b]), monomial_key([a, b])]


def ursell_monomials(points: Sequence[tuple]) -> list:
    """Monomials needed for the four-point Ursell function at ``points``."""
    if len(points) != 4:
        raise PreconditionError("the Ursell function takes four points")
    keys = [monomial_key(points)]
    keys += [monomial_key(p) for p in combinations(points, 2)]
    keys += [monomial_key([p]) for p in points]
    return list(dict.fromkeys(keys))


def default_monomials(n_sites: int) -> list:
    return [monomial_key([(i, 0)]) for i in range(n_sites)] + [monomial_key([(i, 0), (i, 0)]) for i in range(n_sites)]


# ---------------------------------------------------------------------------
# sampling


def effective_sample_size(x) -> float:
    """Effective sample size from Geyer's initial positive sequence."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    y = x - x.mean()
    var = float(np.dot(y, y)) / n
    if var == 0.0 or not math.isfinite(var):
        return float(n)
    f = np.fft.rfft(y, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    m = (n - 1) // 2
    pairs = acf[: 2 * m : 2] + acf[1 : 2 * m : 2]
    neg = np.nonzero(pairs <= 0)[0]
    if neg.size:
        pairs = pairs[: neg[0]]
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * float(np.sum(pairs))
    return float(n / max(tau, 1.0 / n))


def _chain_rng(master_seed: int, chain_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(int(chain_index),))
    return np.random.Generator(np.random.Philox(ss))


def _layout(monomials) -> tuple:
    keys = list(dict.fromkeys(monomial_key(m) for m in monomials))
    return tuple(keys) + SPECIAL_KEYS


def _mono_arrays(keys, P):
    monos = [k for k in keys if not isinstance(k, str)]
    deg = max((len(k) for k in monos), default=1)
    idx = np.zeros((len(monos), max(deg, 1)), dtype=np.int64)
    ln = np.zeros(len(monos), dtype=np.int64)
    for r, k in enumerate(monos):
        ln[r] = len(k)
        for j, (s, t) in enumerate(k):
            idx[r, j] = s * P + t
    return idx, ln


def _kernel_args(action: DiscreteAction):
    return (
        float(action.epsilon),
        float(action.kinetic_coefficient),
        float(action.rigidity),
        np.ascontiguousarray(action.even_coeffs, dtype=float),
        np.ascontiguousarray(action.fields, dtype=float),
        np.ascontiguousarray(action.coupling, dtype=float),
        np.ascontiguousarray(action.boundary_field, dtype=float),
    )


def _check_layout(action, keys):
    for k in keys:
        if isinstance(k, str):
            continue
        for s, t in k:
            if not (0 <= s < action.n_sites and 0 <= t < action.P):
                raise PreconditionError(f"monomial {k} lies outside the {action.n_sites} x {action.P} slice grid")


def sample_chain(action: DiscreteAction, params: McParams, chain_index: int,
                 monomials: Iterable | None = None) -> ChainStats:
    """Run one Metropolis chain and summarize the recorded observables.

    Raises
    ------
    SamplerDiagnosticError
        If an acceptance rate after burn-in lies outside ``[0.05, 0.95]``.
    """
    if monomials is None:
        monomials = default_monomials(action.n_sites)
    keys = _layout(monomials)
    _check_layout(action, keys)
    n, P = action.n_sites, action.P
    per = n * P
    args = _kernel_args(action)
    mono_idx, mono_len = _mono_arrays(keys, P)
    mix = float(params.update_mix)
    n_cluster = int(params.cluster_moves)
    cstride = n_cluster * (n * n + 2)
    rng = _chain_rng(params.master_seed, chain_index)
    x = np.zeros((n, P))
    widths = np.array(params.proposal_width, dtype=float)
    no_rec = np.zeros((0, len(keys)))

    done = 0
    while done < params.n_burnin:
        batch = min(_ADAPT_BATCH, params.n_burnin - done)
        acc = np.zeros(6)
        u = rng.random(3 * per * batch)
        uc = rng.random(cstride * batch) if n_cluster else _NO_UNIFORMS
        _kernels.metropolis_sweeps(x, batch, *args, widths, mix, u, acc, no_rec, mono_idx, mono_len, n_cluster, uc)
        for j in range(2):
            if acc[2 * j + 1] > 0:
                rate = acc[2 * j] / acc[2 * j + 1]
                widths[j] *= min(2.0, max(0.5, (rate + 0.01) / (params.target_acceptance + 0.01)))
        done += batch

    sizes = np.full(params.n_blocks, params.n_sweeps // params.n_blocks)
    sizes[: params.n_sweeps % params.n_blocks] += 1
    n_obs = len(keys)
    trace = np.empty((params.n_sweeps, n_obs))
    acc = np.zeros(6)
    pos = 0
    for size in sizes:
        left = int(size)
        while left:
            step = min(left, _BLOCK_SWEEPS)
            u = rng.random(3 * per * step)
            uc = rng.random(cstride * step) if n_cluster else _NO_UNIFORMS
            _kernels.metropolis_sweeps(x, step, *args, widths, mix, u, acc, trace[pos : pos + step],
                                       mono_idx, mono_len, n_cluster, uc)
            pos += step
            left -= step

    rates = tuple(float(acc[2 * j] / acc[2 * j + 1]) if acc[2 * j + 1] else float("nan") for j in range(2))
    lo, hi = ACCEPTANCE_RANGE
    for name, r in zip(("single-slice", "loop-shift"), rates):
        if math.isfinite(r) and not lo <= r <= hi:
            raise SamplerDiagnosticError(f"{name} acceptance {r:.3f} outside [{lo}, {hi}] after adaptation")
    if not np.all(np.isfinite(trace)):
        raise SamplerDiagnosticError("non-finite observable values in the chain")

    bounds = np.concatenate([[0], np.cumsum(sizes)])
    block_means = np.array([trace[bounds[b] : bounds[b + 1]].mean(axis=0) for b in range(params.n_blocks)])
    summary = ChainSummary(
        chain_index=int(chain_index),
        n=params.n_sweeps,
        sums=trace.sum(axis=0),
        sumsq=np.einsum("ij,ij->j", trace, trace),
        block_means=block_means,
        ess=np.array([effective_sample_size(trace[:, j]) for j in range(n_obs)]),
        acceptance=rates,
        widths=tuple(float(w) for w in widths),
        trace=trace[:: params.trace_stride].copy() if params.trace_stride else None,
    )
    periodic = action.box is not None and action.box.boundary == "periodic"
    return ChainStats(keys, (summary,), n, P, periodic)


def default_threads() -> int:
    env = os.environ.get("QCRYSTAL_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def run_chains(action: DiscreteAction, params: McParams, monomials: Iterable | None = None,
               threads: int | None = None) -> ChainStats:
    """Run ``params.n_chains`` independent chains and merge them by index."""
    monomials = list(monomials) if monomials is not None else None
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or params.n_chains == 1:
        parts = [sample_chain(action, params, c, monomials) for c in range(params.n_chains)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: sample_chain(action, params, c, monomials), range(params.n_chains)))
    out = parts[0]
    for p in parts[1:]:
        out = out.merge(p)
    return out


# ---------------------------------------------------------------------------
# estimators


def _sd_of_mean(values: np.ndarray) -> float:
    k = values.shape[0]
    if k < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / math.sqrt(k))


def _jackknife(values: np.ndarray, weights: np.ndarray, fn: Callable) -> float:
    """Delete-one-group jackknife error of ``fn`` applied to weighted group means."""
    k = values.shape[0]
    if k < 2:
        return float("nan")
    total = weights @ values
    wsum = weights.sum()
    reps = np.array([fn((total - weights[g] * values[g]) / (wsum - weights[g])) for g in range(k)])
    return float(math.sqrt((k - 1) / k * np.sum((reps - reps.mean()) ** 2)))


def _derived(stats: ChainStats, cols: Sequence[int], fn: Callable, method: str) -> Estimate:
    """Estimate ``fn(means[cols])`` with the larger of chain and batch jackknife errors."""
    cols = list(cols)
    chain_means = np.array([c.means[cols] for c in stats.chains])
    chain_w = np.array([c.n for c in stats.chains], dtype=float)
    blocks = np.concatenate([c.block_means[:, cols] for c in stats.chains])
    block_w = np.concatenate([np.full(c.block_means.shape[0], c.n / c.block_means.shape[0]) for c in stats.chains])
    pooled = chain_w @ chain_means / chain_w.sum()
    value = float(fn(pooled))
    errs = [_jackknife(chain_means, chain_w, fn), _jackknife(blocks, block_w, fn)]
    errs = [e for e in errs if math.isfinite(e)]
    return Estimate(value, max(errs) if errs else float("nan"), stats.n_chains, method)


def estimate_mean(stats: ChainStats, key) -> Estimate:
    """Pooled mean with the larger of between-chain and batch-means errors."""
    j = stats.column(key)
    chain_means = np.array([c.means[j] for c in stats.chains])
    chain_w = np.array([c.n for c in stats.chains], dtype=float)
    value = float(chain_w @ chain_means / chain_w.sum())
    blocks = np.concatenate([c.block_means[:, j] for c in stats.chains])
    errs = [e for e in (_sd_of_mean(chain_means), _sd_of_mean(blocks)) if math.isfinite(e)]
    return Estimate(value, max(errs) if errs else float("nan"), stats.n_chains, "mean")


def estimate_order_parameter(stats: ChainStats, box: Box, slice_average: bool = True) -> Estimate:
    """Squared block magnetization at time zero on a periodic box.

    On a torus the action is invariant under cyclic shifts of the time
    slices, so the slice-averaged estimator has the same expectation as
    the slice-0 one and lower variance. ``slice_average=False`` uses
    slice 0 only.
    """
    if box.boundary != "periodic" or not stats.periodic:
        raise PreconditionError("the order parameter is defined on periodic boxes")
    if len(box) != stats.n_sites:
        raise PreconditionError("box does not match the sampled action")
    key = "block_m2" if slice_average else "block_m2_slice0"
    est = estimate_mean(stats, key)
    return Estimate(est.value, est.error, est.n_chains, "order_parameter")


def estimate_pair_correlation(stats: ChainStats, site: int, site2: int, tau: int, tau2: int) -> Estimate:
    """Connected correlator ``<x_a x_b> - <x_a><x_b>``."""
    a, b = (site, tau), (site2, tau2)
    cols = [stats.column(k) for k in pair_monomials(a, b)]
    return _derived(stats, cols, lambda m: m[2] - m[0] * m[1], "pair_correlation")


def estimate_ursell(stats: ChainStats, points: Sequence[tuple]) -> Estimate:
    """Four-point moment minus the three pairings of connected correlators."""
    points = [tuple(p) for p in points]
    keys = ursell_monomials(points)
    cols = [stats.column(k) for k in keys]
    pos = {k: i for i, k in enumerate(keys)}

    def mean(m, pts):
        return m[pos[monomial_key(pts)]]

    def corr(m, p, q):
        return mean(m, [p, q]) - mean(m, [p]) * mean(m, [q])

    p1, p2, p3, p4 = points

    def fn(m):
        return (mean(m, points) - corr(m, p1, p2) * corr(m, p3, p4)
                - corr(m, p1, p3) * corr(m, p2, p4) - corr(m, p1, p4) * corr(m, p2, p3))

    return _derived(stats, cols, fn, "ursell")
