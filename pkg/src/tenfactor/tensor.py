"""Dense d-way tensors, mode unfoldings, Khatri-Rao products and CP models.

Tensors are stored as a flat float64 buffer linearized with the first index
varying fastest (column-major). All public mode indices are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericError

__all__ = [
    "DenseTensor",
    "UnfoldedMatrix",
    "CpModel",
    "as_tensor",
    "unfold",
    "fold",
    "unfold_column_index",
    "khatri_rao",
    "cp_reconstruct",
    "frobenius_norm",
    "inner",
]


def _readonly(a):
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Immutable d-way array of float64 values.

    Parameters
    ----------
    shape : tuple of int
        Dimensions ``(N_1, ..., N_d)``; every entry must be >= 1.
    data : array_like
        Flat buffer of length ``prod(shape)`` in mode-1-fastest order.
    """

    shape: tuple
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        if len(shape) < 1:
            raise DomainError("a tensor needs at least one mode")
        if any(n < 1 for n in shape):
            raise DomainError(f"all dimensions must be positive, got {shape}")
        data = np.array(self.data, dtype=np.float64, copy=True).reshape(-1)
        if data.size != math.prod(shape):
            raise DomainError(
                f"data length {data.size} does not match shape {shape} "
                f"(expected {math.prod(shape)})"
            )
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "data", _readonly(data))

    @classmethod
    def from_array(cls, array) -> DenseTensor:
        """Wrap an n-d array, reading elements by their multi-index."""
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1)
        return cls(array.shape, array.ravel(order="F"))

    @property
    def ndim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def array(self) -> np.ndarray:
        """Read-only n-d view with ``array[i_1, ..., i_d]`` indexing."""
        return self.data.reshape(self.shape, order="F")

    def __getitem__(self, index):
        return self.array[index]

    def __repr__(self):
        return f"DenseTensor(shape={self.shape})"


def as_tensor(t) -> DenseTensor:
    """Return ``t`` as a DenseTensor, converting arrays when needed."""
    if isinstance(t, DenseTensor):
        return t
    return DenseTensor.from_array(t)


@dataclass(frozen=True, eq=False)
class UnfoldedMatrix:
    """Mode-``mode`` matricization of a tensor with shape ``origin_shape``."""

    mode: int
    values: np.ndarray = field(repr=False)
    origin_shape: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in self.origin_shape)
        values = np.asarray(self.values, dtype=np.float64)
        if not 0 <= self.mode < len(shape):
            raise DomainError(f"mode {self.mode} out of range for shape {shape}")
        expected = (shape[self.mode], math.prod(shape) // shape[self.mode])
        if values.shape != expected:
            raise DomainError(
                f"unfolding has shape {values.shape}, expected {expected} "
                f"for mode {self.mode} of {shape}"
            )
        object.__setattr__(self, "origin_shape", shape)
        object.__setattr__(self, "values", _readonly(values))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def _check_mode(mode, ndim):
    if isinstance(mode, bool) or not isinstance(mode, (int, np.integer)):
        raise DomainError(f"mode must be an integer, got {mode!r}")
    if not 0 <= mode < ndim:
        raise DomainError(f"mode {mode} out of range for a {ndim}-way tensor")
    return int(mode)


def unfold(t, mode: int) -> UnfoldedMatrix:
    """Mode-``mode`` unfolding: the mode fibers become the columns.

    Columns are ordered with the remaining indices taken in increasing mode
    order, lowest mode varying fastest.
    """
    t = as_tensor(t)
    mode = _check_mode(mode, t.ndim)
    moved = np.moveaxis(t.array, mode, 0)
    values = np.ascontiguousarray(moved.reshape((t.shape[mode], -1), order="F"))
    return UnfoldedMatrix(mode, values, t.shape)


def fold(m: UnfoldedMatrix) -> DenseTensor:
    """Inverse of :func:`unfold`."""
    shape = m.origin_shape
    rest = shape[: m.mode] + shape[m.mode + 1 :]
    arr = np.asarray(m.values).reshape((shape[m.mode],) + rest, order="F")
    return DenseTensor.from_array(np.moveaxis(arr, 0, m.mode))


def unfold_column_index(index: Sequence[int], mode: int, shape: Sequence[int]):
    """Column of the mode-``mode`` unfolding holding element ``index``.

    0-based version of the mapping ``k = 1 + sum_{n != j} (i_n - 1) prod_{m < n, m != j} N_m``.
    """
    mode = _check_mode(mode, len(shape))
    col, stride = 0, 1
    for n, (i, size) in enumerate(zip(index, shape)):
        if n == mode:
            continue
        col += i * stride
        stride *= size
    return col


def khatri_rao(mats: Sequence[np.ndarray], skip: int | None = None) -> np.ndarray:
    """Column-wise Kronecker product.

    Without ``skip`` the product is taken left to right, so
    ``khatri_rao([A, B])`` has columns ``kron(a_r, b_r)``.

    With ``skip=j`` the list is read as per-mode matrices ``V_1..V_d`` and the
    product runs in descending mode order with mode ``j`` left out,
    ``V_d ⊙ ... ⊙ V_{j+1} ⊙ V_{j-1} ⊙ ... ⊙ V_1``. This is the ordering that
    matches the columns of ``unfold(t, j)``.
    """
    mats = [np.asarray(m, dtype=np.float64) for m in mats]
    if skip is not None:
        skip = _check_mode(skip, len(mats))
        mats = [m for k, m in enumerate(mats) if k != skip][::-1]
    if not mats:
        raise DomainError("khatri_rao needs at least one matrix")
    for m in mats:
        if m.ndim != 2:
            raise DomainError(f"khatri_rao operands must be 2-D, got {m.ndim}-D")
    n_cols = mats[0].shape[1]
    if any(m.shape[1] != n_cols for m in mats):
        raise DomainError(
            "khatri_rao operands must share a column count, got "
            f"{[m.shape[1] for m in mats]}"
        )
    out = mats[0]
    for m in mats[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(-1, n_cols)
    return out


@dataclass(frozen=True, eq=False)
class CpModel:
    """Normalized CP model ``sum_r scales[r] * m_{1,r} ⊗ ... ⊗ m_{d,r}``.

    ``modes[j]`` is an ``N_j x R`` matrix with unit-norm columns. Scales are
    ordered by non-increasing magnitude by the estimators; a scale may carry a
    sign when the product of mode signs is fixed by convention (see
    :func:`tenfactor.eigen.fix_sign`).
    """

    modes: tuple
    scales: np.ndarray

    def __post_init__(self):
        modes = tuple(_readonly(np.array(m, dtype=np.float64, ndmin=2)) for m in self.modes)
        scales = _readonly(np.array(self.scales, dtype=np.float64).reshape(-1))
        if not modes:
            raise DomainError("a CP model needs at least one mode")
        rank = scales.size
        for j, m in enumerate(modes):
            if m.ndim != 2 or m.shape[1] != rank:
                raise DomainError(
                    f"mode {j} matrix has shape {m.shape}, expected (N_{j}, {rank})"
                )
            if not np.all(np.isfinite(m)):
                raise NumericError(f"mode {j} matrix has non-finite entries")
            if rank and not np.allclose(np.linalg.norm(m, axis=0), 1.0, rtol=0, atol=1e-10):
                raise DomainError(f"mode {j} matrix columns must have unit norm")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "scales", scales)

    @classmethod
    def from_factors(cls, factors: Sequence[np.ndarray]) -> CpModel:
        """Normalize raw factor matrices ``V_j`` into unit modes and scales.

        ``scales[r]`` is the product of the column norms ``prod_j ||v_{j,r}||``.
        """
        factors = [np.asarray(v, dtype=np.float64) for v in factors]
        norms = np.array([np.linalg.norm(v, axis=0) for v in factors])
        if np.any(norms == 0):
            raise DomainError("factor columns must be nonzero")
        return cls(tuple(v / n for v, n in zip(factors, norms)), norms.prod(axis=0))

    @property
    def shape(self) -> tuple:
        return tuple(m.shape[0] for m in self.modes)

    @property
    def rank(self) -> int:
        return self.scales.size

    @property
    def ndim(self) -> int:
        return len(self.modes)

    def truncate(self, rank: int) -> CpModel:
        """Keep the first ``rank`` components."""
        return CpModel(tuple(m[:, :rank] for m in self.modes), self.scales[:rank])


def cp_reconstruct(model: CpModel) -> DenseTensor:
    """Dense tensor ``sum_r scales[r] * outer(m_{1,r}, ..., m_{d,r})``."""
    shape = model.shape
    if model.rank == 0:
        return DenseTensor(shape, np.zeros(math.prod(shape)))
    first = model.modes[0] * model.scales
    if model.ndim == 1:
        return DenseTensor(shape, first.sum(axis=1))
    values = first @ khatri_rao(model.modes, skip=0).T
    return fold(UnfoldedMatrix(0, values, shape))


def frobenius_norm(t) -> float:
    """Square root of the sum of squared entries."""
    data = as_tensor(t).data
    return math.sqrt(float(data @ data))


def inner(a, b) -> float:
    """Frobenius inner product of two equally shaped tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DomainError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(a.data @ b.data)
