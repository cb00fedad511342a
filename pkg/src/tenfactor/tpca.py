"""Tensor PCA: per-mode PCA of the unfoldings of a d-way tensor.

For every mode ``j`` the tensor is unfolded into ``Y_(j)`` and the leading
eigenvectors of ``Y_(j) Y_(j)^T`` estimate the normalized loadings of that
mode, while the leading eigenvalues estimate the squared scales.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .eigen import EigenLadder, gram_eigen
from .errors import DomainError, NearTieWarning, NumericError
from .tensor import (
    CpModel,
    DenseTensor,
    as_tensor,
    cp_reconstruct,
    fold,
    khatri_rao,
    unfold,
    UnfoldedMatrix,
)

__all__ = [
    "SCALE_RULES",
    "NEAR_TIE_RTOL",
    "TpcaFit",
    "PooledFit",
    "tpca_fit",
    "pooled_pca_fit",
    "model_complexity",
    "r_squared",
    "projection_scales",
]

SCALE_RULES = ("largest-mode", "mean", "per-mode", "projection")
NEAR_TIE_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class TpcaFit:
    """Result of :func:`tpca_fit`.

    ``per_mode_scales[j, r]`` is the ``r``-th largest eigenvalue of the mode-``j``
    Gram matrix, i.e. an estimate of ``sigma_r**2``. ``projection_scales[r]``
    is ``<Y, m_{1,r} ⊗ ... ⊗ m_{d,r}>``, which for a matrix equals the
    singular value route ``m_1^T Y m_2``.
    """

    model: CpModel
    per_mode_scales: np.ndarray = field(repr=False)
    ladders: tuple = field(repr=False)
    r_squared: float
    residual_fro: float
    scale_rule: str = "largest-mode"
    scale_mode: int | None = None
    projection_scales: np.ndarray = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return self.model.rank

    @property
    def modes(self) -> tuple:
        return self.model.modes

    @property
    def scales(self) -> np.ndarray:
        return self.model.scales


@dataclass(frozen=True, eq=False)
class PooledFit:
    """2-way PCA fit after pooling every mode except ``kept_mode``.

    ``factors`` (``N_kept x R``) and ``loadings`` (``prod(pooled) x R``) have
    unit columns; pooled loadings are indexed like the columns of
    ``unfold(y, kept_mode)``.
    """

    kept_mode: int
    shape: tuple
    factors: np.ndarray = field(repr=False)
    loadings: np.ndarray = field(repr=False)
    scales: np.ndarray
    r_squared: float
    residual_fro: float

    @property
    def rank(self) -> int:
        return self.scales.size

    @property
    def n_params(self) -> int:
        n_kept = self.shape[self.kept_mode]
        return self.rank * (n_kept + math.prod(self.shape) // n_kept)

    def reconstruct(self) -> DenseTensor:
        values = (self.factors * self.scales) @ self.loadings.T
        return fold(UnfoldedMatrix(self.kept_mode, values, self.shape))


def _check_rank(rank, shape):
    if isinstance(rank, bool) or not isinstance(rank, (int, np.integer)) or rank < 1:
        raise DomainError(f"rank must be a positive integer, got {rank!r}")
    if rank > min(shape):
        raise DomainError(f"rank {rank} exceeds the smallest dimension of {shape}")
    return int(rank)


def _sign(x):
    return -1.0 if x < 0 else 1.0


def projection_scales(y, modes) -> np.ndarray:
    """``<Y, m_{1,r} ⊗ ... ⊗ m_{d,r}>`` for each column ``r`` of the mode matrices.

    Computed one component at a time so that the value for column ``r`` does
    not depend on how many columns are passed.
    """
    y = as_tensor(y)
    y0 = unfold(y, 0).values
    rank = modes[0].shape[1]
    out = np.empty(rank)
    for r in range(rank):
        cols = [m[:, r : r + 1] for m in modes]
        if y.ndim == 1:
            out[r] = float(y.data @ cols[0][:, 0])
            continue
        w = khatri_rao(cols, skip=0)[:, 0]
        out[r] = float(cols[0][:, 0] @ (y0 @ w))
    return out


def r_squared(fit, y) -> float:
    """``1 - RSS/TSS`` of the fitted reconstruction against ``y``.

    ``fit`` may be a :class:`TpcaFit`, :class:`PooledFit`, a :class:`CpModel`
    or ``None`` (the zero reconstruction).
    """
    y = as_tensor(y)
    tss = float(y.data @ y.data)
    if tss == 0:
        raise DomainError("R^2 is undefined for an all-zero tensor")
    if fit is None:
        return 0.0
    if isinstance(fit, PooledFit):
        recon = fit.reconstruct()
    else:
        recon = cp_reconstruct(fit.model if isinstance(fit, TpcaFit) else fit)
    if recon.shape != y.shape:
        raise DomainError(f"fit shape {recon.shape} does not match data shape {y.shape}")
    resid = y.data - recon.data
    return 1.0 - float(resid @ resid) / tss


def _warn_near_ties(ladder: EigenLadder, all_values, rank):
    for r in range(min(rank, all_values.size - 1)):
        top = all_values[r]
        if top > 0 and (top - all_values[r + 1]) < NEAR_TIE_RTOL * top:
            warnings.warn(
                f"mode {ladder.mode}: eigenvalues {r + 1} and {r + 2} are nearly tied "
                f"(gap {top - all_values[r + 1]:.3g}); eigen-gap delta_{r + 1} is too "
                f"small to identify component {r + 1}",
                NearTieWarning,
                stacklevel=3,
            )


def tpca_fit(y, rank: int, scale_rule: str = "largest-mode", scale_mode: int | None = None) -> TpcaFit:
    """Estimate a rank-``rank`` tensor factor model by tensor PCA.

    Parameters
    ----------
    y : DenseTensor or array_like
        Observed tensor; used as given (no centering).
    rank : int
        Number of components, ``1 <= rank <= min(shape)``.
    scale_rule : {"largest-mode", "mean", "per-mode", "projection"}
        How the single scale ``sigma_r`` is formed from the per-mode
        eigenvalues. ``"largest-mode"`` takes the square root of the eigenvalue
        from the mode with the largest dimension (lowest index on ties),
        ``"mean"`` the square root of the across-mode mean, ``"per-mode"`` the
        mode given by ``scale_mode``, and ``"projection"`` the magnitude of
        :func:`projection_scales`.
    scale_mode : int, optional
        Mode used by ``scale_rule="per-mode"``.

    Returns
    -------
    TpcaFit

    Notes
    -----
    Each eigenvector is sign-fixed on its own, so the sign of the rank-one
    term is carried by the scale: ``sigma_r`` is multiplied by the sign of
    ``<Y, m_{1,r} ⊗ ... ⊗ m_{d,r}>``.
    """
    y = as_tensor(y)
    rank = _check_rank(rank, y.shape)
    if scale_rule not in SCALE_RULES:
        raise DomainError(f"unknown scale_rule {scale_rule!r}; choose from {SCALE_RULES}")
    if scale_rule == "per-mode":
        if scale_mode is None or not 0 <= scale_mode < y.ndim:
            raise DomainError("scale_rule='per-mode' needs a valid scale_mode")
    if not np.all(np.isfinite(y.data)):
        raise NumericError("tensor contains non-finite entries")

    ladders = []
    for j in range(y.ndim):
        full = gram_eigen(unfold(y, j))
        _warn_near_ties(full, full.values, rank)
        ladders.append(full.head(rank))
    modes = tuple(lad.vectors for lad in ladders)
    per_mode = np.array([lad.values for lad in ladders])

    proj = projection_scales(y, modes)
    signs = np.array([_sign(c) for c in proj])
    if scale_rule == "largest-mode":
        j_star = int(np.argmax(y.shape))
        magnitude = np.sqrt(np.clip(per_mode[j_star], 0, None))
    elif scale_rule == "per-mode":
        magnitude = np.sqrt(np.clip(per_mode[scale_mode], 0, None))
    elif scale_rule == "mean":
        magnitude = np.sqrt(np.clip(per_mode.mean(axis=0), 0, None))
    else:
        magnitude = np.abs(proj)

    model = CpModel(modes, signs * magnitude)
    resid = y.data - cp_reconstruct(model).data
    rss = float(resid @ resid)
    tss = float(y.data @ y.data)
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    return TpcaFit(
        model=model,
        per_mode_scales=per_mode,
        ladders=tuple(ladders),
        r_squared=r2,
        residual_fro=float(np.sqrt(rss)),
        scale_rule=scale_rule,
        scale_mode=scale_mode if scale_rule == "per-mode" else None,
        projection_scales=proj,
    )


def pooled_pca_fit(y, pool_modes, rank: int) -> PooledFit:
    """2-way PCA after merging ``pool_modes`` into a single dimension.

    Exactly one mode must remain un-pooled; PCA runs on its unfolding, giving
    factors along the kept mode and pooled loadings
    (``beta_{i,j,r} = lambda_{i,r} mu_{j,r}`` in the 3-way case).
    """
    y = as_tensor(y)
    pool = {int(p) for p in pool_modes}
    if not pool or any(not 0 <= p < y.ndim for p in pool):
        raise DomainError(f"pool_modes {sorted(pool)} invalid for a {y.ndim}-way tensor")
    kept = [j for j in range(y.ndim) if j not in pool]
    if len(kept) != 1:
        raise DomainError("pooling must leave exactly one mode un-pooled")
    kept_mode = kept[0]
    x = unfold(y, kept_mode).values
    rank = _check_rank(rank, (x.shape[0], x.shape[1]))

    ladder = gram_eigen(x, rank)
    factors = ladder.vectors
    proj = x.T @ factors
    scales = np.linalg.norm(proj, axis=0)
    if np.any(scales == 0):
        raise DomainError("pooled fit found a zero component; reduce the rank")
    loadings = proj / scales
    fit = PooledFit(kept_mode, y.shape, factors, loadings, scales, 0.0, 0.0)
    resid = y.data - fit.reconstruct().data
    rss = float(resid @ resid)
    tss = float(y.data @ y.data)
    return PooledFit(
        kept_mode, y.shape, factors, loadings, scales,
        1.0 - rss / tss if tss > 0 else 0.0, float(np.sqrt(rss)),
    )


def model_complexity(shape, rank: int, pooled: bool = False, kept_mode: int = 0) -> float:
    """Parameter count as a fraction of the number of tensor entries.

    The d-way model has ``R * sum(N_j)`` parameters. The pooled 2-way model
    keeps ``kept_mode`` (the time mode, listed first as in ``(T, N, J)``)
    and merges the rest, giving ``R * (N_kept + prod(others))``.
    """
    shape = tuple(int(n) for n in shape)
    if not shape or any(n < 1 for n in shape):
        raise DomainError(f"invalid shape {shape}")
    if rank < 1:
        raise DomainError("rank must be >= 1")
    total = math.prod(shape)
    if pooled:
        if not 0 <= kept_mode < len(shape):
            raise DomainError(f"kept_mode {kept_mode} out of range")
        n_params = rank * (shape[kept_mode] + total // shape[kept_mode])
    else:
        n_params = rank * sum(shape)
    return n_params / total
