"""Symmetric eigendecomposition of unfolding Gram matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError
from .tensor import UnfoldedMatrix

__all__ = ["EigenLadder", "gram_eigen", "fix_sign", "DEGENERACY_RTOL"]

DEGENERACY_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class EigenLadder:
    """Eigenvalues of ``Y_(j) Y_(j)^T`` in descending order with eigenvectors.

    Attributes
    ----------
    values : ndarray, shape (n,)
        Non-increasing eigenvalues.
    vectors : ndarray, shape (N_j, n)
        Orthonormal, sign-fixed eigenvectors; column ``r`` pairs with ``values[r]``.
    mode : int or None
        Unfolding mode the ladder came from.
    near_degenerate : bool
        True when two adjacent returned eigenvalues (or the last returned and
        the next one) differ by less than ``DEGENERACY_RTOL`` relative to the
        largest magnitude.
    """

    values: np.ndarray = field(repr=False)
    vectors: np.ndarray = field(repr=False)
    mode: int | None = None
    near_degenerate: bool = False

    def __len__(self):
        return self.values.size

    def head(self, top: int) -> EigenLadder:
        return EigenLadder(self.values[:top], self.vectors[:, :top], self.mode, self.near_degenerate)


def fix_sign(v) -> np.ndarray:
    """Flip ``v`` so its largest-magnitude entry is positive.

    Ties in magnitude go to the lowest index.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("fix_sign expects a non-empty vector")
    idx = int(np.argmax(np.abs(v)))
    if v[idx] == 0:
        raise DomainError("cannot fix the sign of a zero vector")
    return -v if v[idx] < 0 else v.copy()


def gram_eigen(m, top: int | None = None) -> EigenLadder:
    """Eigenpairs of the row-side Gram matrix ``X X^T`` of an unfolding.

    The full decomposition is always computed and then truncated, so the
    leading pairs do not depend on ``top``.

    Parameters
    ----------
    m : UnfoldedMatrix or array_like, shape (rows, cols)
    top : int, optional
        Number of leading pairs to keep; all ``rows`` pairs when omitted.
    """
    mode = m.mode if isinstance(m, UnfoldedMatrix) else None
    x = np.asarray(m.values if isinstance(m, UnfoldedMatrix) else m, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DomainError(f"expected a matrix with at least one row, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("unfolding contains non-finite entries")
    n = x.shape[0]
    if top is None:
        top = n
    elif not 1 <= top <= n:
        raise DomainError(f"top={top} must lie in 1..{n}")

    gram = x @ x.T
    gram = 0.5 * (gram + gram.T)
    values, vectors = np.linalg.eigh(gram)
    values = values[::-1]
    vectors = vectors[:, ::-1]

    keep = min(top + 1, n)
    gaps = -np.diff(values[:keep])
    scale = max(abs(values[0]), np.finfo(float).tiny)
    degenerate = bool(np.any(gaps < DEGENERACY_RTOL * scale))

    vectors = np.column_stack([fix_sign(vectors[:, r]) for r in range(top)])
    return EigenLadder(
        np.ascontiguousarray(values[:top]), vectors, mode, degenerate
    )
