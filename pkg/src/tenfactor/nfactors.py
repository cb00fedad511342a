"""Eigenvalue-ratio test for the number of factors in a tensor factor model.

For each unfolding the statistic is the largest ratio of consecutive
eigenvalue gaps of the Gram matrix over candidate ranks ``k < r <= K``. Its
null distribution is simulated from Gaussian symmetric (GOE) matrices, and
the per-mode p-values are combined into a single valid p-value.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .eigen import EigenLadder, gram_eigen
from .errors import DomainError
from .tensor import as_tensor, unfold

__all__ = [
    "TestSpec",
    "FactorCountResult",
    "NullSample",
    "COMBINATION_RULES",
    "NULL_DIM_CAP",
    "eigenratio_stat",
    "goe_matrix",
    "simulate_null",
    "empirical_pvalue",
    "combine_pvalues",
    "test_num_factors",
]

COMBINATION_RULES = ("min", "median", "mean", "max")
NULL_DIM_CAP = 256


@dataclass(frozen=True)
class TestSpec:
    """Hypotheses ``H0: <= k factors`` vs ``H1: more than k but <= K``.

    ``null_dim`` is the side of the simulated GOE matrices; ``None`` resolves
    to ``min(N_j)`` capped at :data:`NULL_DIM_CAP` when the test runs.
    ``null_dims`` optionally gives a per-mode override as ``{mode: dim}``.
    """

    __test__ = False  # not a pytest class

    k: int
    K: int
    m: int = 5000
    seed: int = 0
    null_dim: int | None = None
    null_dims: dict | None = None

    def __post_init__(self):
        if self.k < 0:
            raise DomainError("k must be >= 0")
        if self.K < self.k + 1:
            raise DomainError("K must be >= k + 1")
        if self.m < 100:
            raise DomainError("at least 100 null draws are required")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        for dim in [self.null_dim, *(self.null_dims or {}).values()]:
            if dim is not None and dim < self.n_eigs:
                raise DomainError(f"null_dim must be >= K - k + 2 = {self.n_eigs}")

    @property
    def n_eigs(self) -> int:
        """Eigenvalues needed per null draw."""
        return self.K - self.k + 2

    def null_key(self, dim: int) -> tuple:
        """Cache key identifying a null sample for this hypothesis."""
        return (self.k, self.K, self.m, int(self.seed), int(dim))


@dataclass(frozen=True, eq=False)
class NullSample:
    """Sorted Monte Carlo draws of the null statistic ``Z``."""

    values: np.ndarray = field(repr=False)
    k: int
    K: int
    null_dim: int
    seed: int

    @property
    def m(self) -> int:
        return self.values.size

    def cdf(self, x: float) -> float:
        """Right-continuous empirical CDF ``(1/m) #{Z_i <= x}``."""
        return np.searchsorted(self.values, x, side="right") / self.m


@dataclass(frozen=True, eq=False)
class FactorCountResult:
    """Outcome of :func:`test_num_factors`.

    ``per_mode_pvalues`` are floored at ``1/(m+1)``; ``floored[j]`` records
    when that floor was applied and ``diverged[j]`` when ``S_j`` was infinite.
    ``combined`` maps each rule in :data:`COMBINATION_RULES` to its p-value.
    """

    per_mode_stats: np.ndarray
    per_mode_pvalues: np.ndarray
    combined: dict
    k: int
    K: int
    m: int
    seed: int
    null_dims: tuple
    diverged: tuple = ()
    floored: tuple = ()
    dimension_warnings: tuple = ()

    def reject(self, alpha: float = 0.05, rule: str | None = None):
        """Rejection decision for a combination ``rule`` or, if ``None``, per mode."""
        if rule is None:
            return self.per_mode_pvalues <= alpha
        return self.combined[rule] <= alpha


def _values(ladder):
    if isinstance(ladder, EigenLadder):
        return ladder.values
    return np.asarray(ladder, dtype=np.float64)


def eigenratio_stat(ladder, k: int, K: int) -> float:
    """``max_{k < r <= K} (l_r - l_{r+1}) / (l_{r+1} - l_{r+2})`` over 1-based eigenvalues.

    A zero denominator gives ``inf``, signalling divergence.
    """
    vals = _values(ladder)
    if k < 0 or K < k + 1:
        raise DomainError(f"need 0 <= k < K, got k={k}, K={K}")
    if vals.size < K + 2:
        raise DomainError(f"ladder has {vals.size} eigenvalues; K + 2 = {K + 2} required")
    best = -math.inf
    for r in range(k, K):
        num = vals[r] - vals[r + 1]
        den = vals[r + 1] - vals[r + 2]
        ratio = math.inf if den <= 0 else num / den
        best = max(best, ratio)
    return float(best)


def goe_matrix(n: int, rng, variance=(1.0, 2.0)) -> np.ndarray:
    """Symmetric Gaussian matrix with given off-diagonal and diagonal variances."""
    off, diag = variance
    a = rng.standard_normal((n, n))
    h = np.triu(a, 1) * math.sqrt(off)
    h = h + h.T
    h[np.diag_indices(n)] = rng.standard_normal(n) * math.sqrt(diag)
    return h


def _null_draw(spec: TestSpec, dim: int, index: int, variance) -> float:
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(index,)))
    h = goe_matrix(dim, rng, variance)
    n = spec.n_eigs
    top = sla.eigh(h, eigvals_only=True, subset_by_index=(dim - n, dim - 1))[::-1]
    return eigenratio_stat(top, 0, spec.K - spec.k)


def simulate_null(spec: TestSpec, null_dim: int | None = None, variance=(1.0, 2.0), threads: int = 1) -> NullSample:
    """Draw ``spec.m`` copies of the null statistic ``Z`` and sort them.

    Each draw takes the top ``K - k + 2`` eigenvalues of a fresh
    ``null_dim x null_dim`` GOE matrix. Draw ``i`` uses its own RNG stream
    derived from ``(spec.seed, i)``, so the sample does not depend on
    ``threads``.
    """
    dim = null_dim if null_dim is not None else spec.null_dim
    if dim is None:
        raise DomainError("null_dim must be given")
    if dim < spec.n_eigs:
        raise DomainError(f"null_dim {dim} < K - k + 2 = {spec.n_eigs}")

    def draw(i):
        return _null_draw(spec, dim, i, variance)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            values = list(pool.map(draw, range(spec.m), chunksize=64))
    else:
        values = [draw(i) for i in range(spec.m)]
    return NullSample(np.sort(np.array(values)), spec.k, spec.K, dim, spec.seed)


def empirical_pvalue(stat: float, null: NullSample) -> tuple:
    """``1 - F_m(stat)`` floored at ``1/(m+1)``; returns ``(p, floored)``."""
    floor = 1.0 / (null.m + 1)
    if math.isinf(stat):
        return floor, True
    p = 1.0 - null.cdf(stat)
    if p < floor:
        return floor, True
    return float(p), False


def combine_pvalues(pvalues) -> dict:
    """Combined p-values, each clipped to ``[0, 1]``.

    ``min``: ``d * min``; ``median``: ``2 * median``; ``mean``: ``(2/d) * sum``;
    ``max``: ``max``.
    """
    p = np.asarray(pvalues, dtype=np.float64)
    d = p.size
    raw = {
        "min": d * p.min(),
        "median": 2.0 * float(np.median(p)),
        "mean": 2.0 / d * p.sum(),
        "max": p.max(),
    }
    return {rule: float(min(max(v, 0.0), 1.0)) for rule, v in raw.items()}


def resolve_null_dims(shape, spec: TestSpec) -> tuple:
    """Null matrix side used for each mode."""
    default = spec.null_dim
    if default is None:
        default = min(min(shape), NULL_DIM_CAP)
        default = max(default, spec.n_eigs)
    overrides = spec.null_dims or {}
    return tuple(int(overrides.get(j, default)) for j in range(len(shape)))


def mode_ladders(y) -> list:
    """Full eigenvalue ladders of every unfolding's Gram matrix."""
    y = as_tensor(y)
    return [gram_eigen(unfold(y, j)).values for j in range(y.ndim)]


def test_num_factors(y, spec: TestSpec, nulls: dict | None = None, ladders=None, threads: int = 1) -> FactorCountResult:
    """Test ``H0: <= k factors`` on every unfolding and combine the p-values.

    Parameters
    ----------
    y : DenseTensor or array_like
    spec : TestSpec
    nulls : dict, optional
        Null samples keyed by :meth:`TestSpec.null_key`; missing ones are
        simulated and stored, so the dict can be reused across calls.
    ladders : list of ndarray, optional
        Precomputed eigenvalue ladders per mode.
    """
    y = as_tensor(y)
    if ladders is None:
        ladders = mode_ladders(y)
    for j, vals in enumerate(ladders):
        if len(vals) < spec.K + 2:
            raise DomainError(
                f"mode {j} has {len(vals)} eigenvalues; K + 2 = {spec.K + 2} required"
            )
    dims = resolve_null_dims(y.shape, spec)
    nulls = {} if nulls is None else nulls

    dim_warnings = []
    total = math.prod(y.shape)
    for j, n in enumerate(y.shape):
        if n > total // n:
            msg = f"mode {j}: N_j={n} exceeds the product of the other dimensions"
            dim_warnings.append(msg)
            warnings.warn(msg, stacklevel=2)

    stats, pvals, diverged, floored = [], [], [], []
    for j, vals in enumerate(ladders):
        key = spec.null_key(dims[j])
        if key not in nulls:
            nulls[key] = simulate_null(spec, dims[j], threads=threads)
        s = eigenratio_stat(vals, spec.k, spec.K)
        p, was_floored = empirical_pvalue(s, nulls[key])
        stats.append(s)
        pvals.append(p)
        diverged.append(math.isinf(s))
        floored.append(was_floored)

    pvals = np.array(pvals)
    return FactorCountResult(
        per_mode_stats=np.array(stats),
        per_mode_pvalues=pvals,
        combined=combine_pvalues(pvals),
        k=spec.k,
        K=spec.K,
        m=spec.m,
        seed=spec.seed,
        null_dims=dims,
        diverged=tuple(diverged),
        floored=tuple(floored),
        dimension_warnings=tuple(dim_warnings),
    )


test_num_factors.__test__ = False
