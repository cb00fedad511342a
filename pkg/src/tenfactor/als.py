"""Alternating least squares CP fitting, the usual baseline for tensor PCA."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .eigen import fix_sign, gram_eigen
from .errors import DomainError, NumericError
from .tensor import CpModel, as_tensor, cp_reconstruct, khatri_rao, unfold

__all__ = ["AlsOptions", "AlsResult", "als_fit", "orthogonalize", "INIT_METHODS"]

INIT_METHODS = ("random-uniform", "hosvd-warm")
JITTER = 1e-12


@dataclass(frozen=True)
class AlsOptions:
    seed: int
    max_iter: int = 500
    rel_fit_tol: float = 1e-8
    init: str = "random-uniform"

    def __post_init__(self):
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if not self.rel_fit_tol > 0:
            raise DomainError("rel_fit_tol must be positive")
        if self.init not in INIT_METHODS:
            raise DomainError(f"unknown init {self.init!r}; choose from {INIT_METHODS}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class AlsResult:
    """Fitted model plus per-sweep diagnostics.

    ``trace[k]`` is the fit ``1 - ||Y - Yhat||_F / ||Y||_F`` after sweep
    ``k + 1``; ``jitter[k]`` is the largest ridge term added during that sweep
    (0 when every Gram matrix factorized cleanly). ``stalled`` marks a run that
    stopped because a sweep could not improve the fit in floating point.
    """

    model: CpModel
    trace: list = field(repr=False)
    jitter: list = field(repr=False)
    converged: bool
    stalled: bool = False

    @property
    def n_iter(self) -> int:
        return len(self.trace)


def _init_factors(y, rank, opts):
    if opts.init == "hosvd-warm":
        mats = []
        rng = np.random.default_rng(opts.seed)
        for j, n in enumerate(y.shape):
            lad = gram_eigen(unfold(y, j), min(rank, n))
            m = lad.vectors
            if m.shape[1] < rank:
                m = np.hstack([m, rng.random((n, rank - m.shape[1]))])
            mats.append(m)
        return mats
    rng = np.random.default_rng(opts.seed)
    return [rng.random((n, rank)) for n in y.shape]


def _solve_mode(rhs, grams, j):
    """Least-squares update ``rhs @ pinv(hadamard of other grams)``."""
    g = np.ones_like(grams[0])
    for k, gk in enumerate(grams):
        if k != j:
            g = g * gk
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite Gram matrix in the mode {j} update")
    try:
        return sla.cho_solve(sla.cho_factor(g), rhs.T).T, 0.0
    except (np.linalg.LinAlgError, sla.LinAlgError):
        pass
    ridge = JITTER * float(np.trace(g))
    if ridge <= 0:
        raise NumericError(f"singular Gram matrix in the mode {j} update")
    try:
        return sla.cho_solve(sla.cho_factor(g + ridge * np.eye(g.shape[0])), rhs.T).T, ridge
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise NumericError(f"singular Gram matrix in the mode {j} update") from exc


def _normalize(factors):
    """Unit columns, sign convention, and descending |scale| order."""
    rank = factors[0].shape[1]
    norms = np.array([np.linalg.norm(v, axis=0) for v in factors])
    if np.any(norms == 0):
        raise NumericError("ALS produced an all-zero component")
    modes = [v / n for v, n in zip(factors, norms)]
    scales = norms.prod(axis=0)
    for j, m in enumerate(modes):
        for r in range(rank):
            fixed = fix_sign(m[:, r])
            if not np.array_equal(fixed, m[:, r]):
                scales[r] = -scales[r]
            m[:, r] = fixed
    order = np.argsort(-np.abs(scales), kind="stable")
    return CpModel(tuple(m[:, order] for m in modes), scales[order])


def _fit_value(y, model, norm_y):
    resid = y.data - cp_reconstruct(model).data
    return 1.0 - float(np.sqrt(resid @ resid)) / norm_y


def als_fit(y, rank: int, opts: AlsOptions) -> AlsResult:
    """Rank-``rank`` CP fit by alternating least squares.

    Each sweep updates the modes in order ``0..d-1`` with the exact least
    squares solution given the others. After the sweep the columns are
    normalized into a :class:`CpModel`. A sweep that would lower the fit (only
    possible through rounding or ridge jitter) is discarded and the run stops,
    so the recorded trace never decreases.
    """
    y = as_tensor(y)
    if isinstance(rank, bool) or not isinstance(rank, (int, np.integer)) or rank < 1:
        raise DomainError(f"rank must be a positive integer, got {rank!r}")
    if y.ndim < 2:
        raise DomainError("ALS needs a tensor with at least two modes")
    if not np.all(np.isfinite(y.data)):
        raise NumericError("tensor contains non-finite entries")
    norm_y = float(np.sqrt(y.data @ y.data))
    if norm_y == 0:
        raise DomainError("cannot fit an all-zero tensor")

    unfoldings = [unfold(y, j).values for j in range(y.ndim)]
    factors = _init_factors(y, rank, opts)
    model, fit_old = None, -np.inf
    trace, jitters = [], []
    converged = stalled = False

    for _ in range(opts.max_iter):
        new = [v.copy() for v in factors]
        grams = [v.T @ v for v in new]
        sweep_jitter = 0.0
        for j in range(y.ndim):
            rhs = unfoldings[j] @ khatri_rao(new, skip=j)
            new[j], ridge = _solve_mode(rhs, grams, j)
            sweep_jitter = max(sweep_jitter, ridge)
            grams[j] = new[j].T @ new[j]
        candidate = _normalize(new)
        fit_new = _fit_value(y, candidate, norm_y)
        if model is not None and not fit_new >= fit_old:
            stalled = converged = True
            break
        model = candidate
        # spread |scale| evenly over the modes; the sign rides on the last one
        factors = [m * np.abs(model.scales) ** (1.0 / y.ndim) for m in model.modes]
        factors[-1] = factors[-1] * np.where(model.scales < 0, -1.0, 1.0)
        trace.append(fit_new)
        jitters.append(sweep_jitter)
        if len(trace) > 1 and abs(fit_new - fit_old) < opts.rel_fit_tol:
            converged = True
            fit_old = fit_new
            break
        fit_old = fit_new

    return AlsResult(model, trace, jitters, converged, stalled)


def orthogonalize(model: CpModel) -> CpModel:
    """Gram-Schmidt each mode matrix, then refit the scales.

    Columns are orthonormalized in order. With orthonormal modes the rank-one
    terms are orthonormal tensors, so the scales that best reproduce the
    original reconstruction are its projections onto them:
    ``sigma'_r = sum_s sigma_s prod_j <m_{j,s}, q_{j,r}>``.
    """
    qs = []
    for j, m in enumerate(model.modes):
        if m.shape[0] < m.shape[1]:
            raise DomainError(f"mode {j} has more columns than rows; cannot orthogonalize")
        q, r = np.linalg.qr(m)
        diag = np.diag(r)
        col_norms = np.linalg.norm(m, axis=0)
        if np.any(np.abs(diag) <= 1e-12 * np.maximum(col_norms, 1e-300)):
            raise DomainError(f"mode {j} matrix is rank deficient; cannot orthogonalize")
        q = q * np.where(diag < 0, -1.0, 1.0)
        qs.append(q)
    overlap = np.ones((model.rank, model.rank))
    for m, q in zip(model.modes, qs):
        overlap = overlap * (m.T @ q)
    scales = overlap.T @ model.scales
    return CpModel(tuple(qs), scales)
