"""Tensor principal component analysis for d-way tensor factor models."""

__version__ = "0.1.0"

from .errors import DomainError, NearTieWarning, NumericError, TensorFormatError
from .tensor import (
    CpModel,
    DenseTensor,
    UnfoldedMatrix,
    as_tensor,
    cp_reconstruct,
    fold,
    frobenius_norm,
    khatri_rao,
    unfold,
)
from .eigen import EigenLadder, fix_sign, gram_eigen
from .tpca import TpcaFit, PooledFit, model_complexity, pooled_pca_fit, r_squared, tpca_fit
from .als import AlsOptions, AlsResult, als_fit, orthogonalize
from .nfactors import (
    FactorCountResult,
    NullSample,
    TestSpec,
    eigenratio_stat,
    simulate_null,
    test_num_factors,
)
from .simulate import DgpSpec, McSummary, gen_dgp, l2_loss, run_mc_study

__all__ = [
    "__version__",
    "DomainError",
    "NumericError",
    "NearTieWarning",
    "TensorFormatError",
    "DenseTensor",
    "UnfoldedMatrix",
    "CpModel",
    "as_tensor",
    "unfold",
    "fold",
    "khatri_rao",
    "cp_reconstruct",
    "frobenius_norm",
    "EigenLadder",
    "gram_eigen",
    "fix_sign",
    "TpcaFit",
    "PooledFit",
    "tpca_fit",
    "pooled_pca_fit",
    "model_complexity",
    "r_squared",
    "AlsOptions",
    "AlsResult",
    "als_fit",
    "orthogonalize",
    "TestSpec",
    "FactorCountResult",
    "NullSample",
    "eigenratio_stat",
    "simulate_null",
    "test_num_factors",
    "DgpSpec",
    "McSummary",
    "gen_dgp",
    "l2_loss",
    "run_mc_study",
]
