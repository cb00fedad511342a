"""Simulated tensor factor data and Monte Carlo studies of the estimators.

The data generating process is

    y[i_1, ..., i_d] = sum_r sigma_r prod_j m_{j,r}[i_j] + u[i_1, ..., i_d]

where the time mode carries unit-norm AR(1) paths, every other mode carries
orthonormal loadings (leading eigenvectors of ``A^T A`` with ``A`` uniform on
``[0, 1)``), ``sigma_r = d_r * sqrt(prod(shape))`` and ``u`` is i.i.d. noise.

Random streams come from ``SeedSequence(seed, spawn_key=...)``. A DGP seed
``s`` draws its signal from stream ``(0, 0)`` and the noise of replication
``rep`` from ``(0, rep + 1)``; a study derives each grid point's ``s`` from
``(study_seed, point)``. Results therefore do not depend on execution order or
on the number of worker threads.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .als import AlsOptions, als_fit
from .eigen import fix_sign
from .errors import DomainError
from .nfactors import (
    COMBINATION_RULES,
    TestSpec,
    mode_ladders,
    resolve_null_dims,
    simulate_null,
    test_num_factors,
)
from .tensor import CpModel, DenseTensor, cp_reconstruct
from .tpca import model_complexity, pooled_pca_fit, tpca_fit

__all__ = [
    "DgpSpec",
    "McSummary",
    "GridPoint",
    "STUDIES",
    "gen_orthonormal_loadings",
    "gen_ar1_factors",
    "gen_signal",
    "gen_noise",
    "gen_dgp",
    "l2_loss",
    "run_mc_study",
    "study_from_config",
]

STUDIES = ("fit-complexity", "tpca-vs-als", "rate-scaling", "test-power")
ERROR_DISTS = ("gaussian", "student-t")


@dataclass(frozen=True)
class DgpSpec:
    """Parameters of the simulated tensor factor model.

    Attributes
    ----------
    shape : tuple of int
        Tensor dimensions; ``shape[time_mode]`` is the time dimension ``T``.
    rank : int
        True number of factors.
    rho, s_eps : float
        AR(1) coefficient and innovation sd of the factor paths.
    s_u : float
        Noise standard deviation.
    signal : tuple of float, optional
        Signal strengths ``d_r``; default ``d_r = rank - r + 1``.
    error_dist : {"gaussian", "student-t"}
        Student-t noise is rescaled to unit variance before multiplying ``s_u``.
    df : float
        Student-t degrees of freedom.
    time_mode : int
        Mode carrying the AR(1) factors.
    seed : int
    """

    shape: tuple
    rank: int = 1
    rho: float = 0.5
    s_eps: float = 0.1
    s_u: float = 1.0
    signal: tuple | None = None
    error_dist: str = "gaussian"
    df: float = 5.0
    time_mode: int = 0
    seed: int = 0

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "shape", shape)
        if len(shape) < 2 or any(n < 1 for n in shape):
            raise DomainError(f"invalid shape {shape}")
        if not 1 <= self.rank <= min(shape):
            raise DomainError(f"rank {self.rank} must lie in 1..{min(shape)}")
        if not abs(self.rho) < 1:
            raise DomainError("|rho| must be < 1")
        if not (self.s_eps > 0 and self.s_u >= 0):
            raise DomainError("s_eps must be positive and s_u non-negative")
        if not 0 <= self.time_mode < len(shape):
            raise DomainError(f"time_mode {self.time_mode} out of range")
        if shape[self.time_mode] < 2:
            raise DomainError("the time dimension needs T >= 2")
        if self.error_dist not in ERROR_DISTS:
            raise DomainError(f"error_dist must be one of {ERROR_DISTS}")
        if self.error_dist == "student-t" and not self.df > 2:
            raise DomainError("student-t noise needs df > 2 for a finite variance")
        if self.signal is not None:
            sig = tuple(float(s) for s in self.signal)
            object.__setattr__(self, "signal", sig)
            if len(sig) != self.rank:
                raise DomainError("signal needs one strength per factor")
            if any(s < 0 for s in sig) or any(a < b for a, b in zip(sig, sig[1:])):
                raise DomainError("signal strengths must be non-negative and non-increasing")

    @property
    def strengths(self) -> np.ndarray:
        if self.signal is not None:
            return np.array(self.signal)
        return np.arange(self.rank, 0, -1, dtype=np.float64)

    @property
    def sigmas(self) -> np.ndarray:
        return self.strengths * math.sqrt(math.prod(self.shape))


def _rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


def gen_orthonormal_loadings(n: int, rank: int, rng) -> np.ndarray:
    """Leading ``rank`` eigenvectors of ``A^T A`` with ``A`` uniform on [0, 1)."""
    if not 1 <= rank <= n:
        raise DomainError(f"rank {rank} must lie in 1..{n}")
    a = rng.random((n, n))
    _, vecs = np.linalg.eigh(a.T @ a)
    vecs = vecs[:, ::-1][:, :rank]
    return np.column_stack([fix_sign(vecs[:, r]) for r in range(rank)])


def gen_ar1_factors(T: int, rank: int, rho: float, s_eps: float, rng) -> np.ndarray:
    """``rank`` AR(1) paths of length ``T``, each scaled to unit norm.

    Paths start from the stationary law ``N(0, s_eps^2 / (1 - rho^2))``.
    """
    if T < 2:
        raise DomainError("T must be >= 2")
    if not abs(rho) < 1:
        raise DomainError("|rho| must be < 1")
    eps = rng.standard_normal((T, rank)) * s_eps
    f = np.empty((T, rank))
    f[0] = rng.standard_normal(rank) * s_eps / math.sqrt(1.0 - rho**2)
    for t in range(1, T):
        f[t] = rho * f[t - 1] + eps[t]
    return f / np.linalg.norm(f, axis=0)


def gen_signal(spec: DgpSpec, rng) -> CpModel:
    """Draw the true modes and attach ``spec.sigmas``."""
    modes = []
    for j, n in enumerate(spec.shape):
        if j == spec.time_mode:
            modes.append(gen_ar1_factors(n, spec.rank, spec.rho, spec.s_eps, rng))
        else:
            modes.append(gen_orthonormal_loadings(n, spec.rank, rng))
    return CpModel(tuple(modes), spec.sigmas)


def gen_noise(spec: DgpSpec, rng) -> np.ndarray:
    """Flat noise buffer with standard deviation ``s_u``."""
    size = math.prod(spec.shape)
    if spec.error_dist == "student-t":
        z = rng.standard_t(spec.df, size) / math.sqrt(spec.df / (spec.df - 2.0))
    else:
        z = rng.standard_normal(size)
    return z * spec.s_u


def _draw(spec, signal_data, rng):
    if spec.s_u == 0:
        return DenseTensor(spec.shape, signal_data)
    return DenseTensor(spec.shape, signal_data + gen_noise(spec, rng))


def gen_dgp(spec: DgpSpec, rep: int = 0):
    """One draw of the DGP: ``(tensor, truth)``.

    The signal depends only on ``spec.seed``; ``rep`` selects the noise stream.
    """
    truth = gen_signal(spec, _rng(spec.seed, 0, 0))
    signal = cp_reconstruct(truth).data
    return _draw(spec, signal, _rng(spec.seed, 0, rep + 1)), truth


def l2_loss(est, truth) -> float:
    """``|| est * sign(est^T truth) - truth ||`` with ``sign(0) = +1``."""
    est = np.asarray(est, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if est.shape != truth.shape:
        raise DomainError(f"length mismatch: {est.size} vs {truth.size}")
    if not np.any(truth):
        raise DomainError("truth vector must be nonzero")
    s = -1.0 if float(est @ truth) < 0 else 1.0
    return float(np.linalg.norm(s * est - truth))


@dataclass
class GridPoint:
    """One grid point of a study: its DGP, per-replication records and aggregates."""

    label: str
    dgp: DgpSpec
    records: list = field(default_factory=list, repr=False)
    aggregates: dict = field(default_factory=dict)


@dataclass
class McSummary:
    """Aggregated output of :func:`run_mc_study`."""

    study: str
    reps: int
    seed: int
    points: list
    options: dict = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "schema": "mc-study/1",
            "study": self.study,
            "reps": self.reps,
            "seed": self.seed,
            "version": self.version,
            "options": self.options,
            "points": [
                {
                    "label": p.label,
                    "dgp": _dgp_dict(p.dgp),
                    "aggregates": p.aggregates,
                    "records": p.records,
                }
                for p in self.points
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> McSummary:
        if doc.get("schema") != "mc-study/1":
            raise DomainError(f"unexpected schema {doc.get('schema')!r}")
        points = [
            GridPoint(p["label"], DgpSpec(**p["dgp"]), p["records"], p["aggregates"])
            for p in doc["points"]
        ]
        return cls(doc["study"], doc["reps"], doc["seed"], points, doc.get("options", {}), doc["version"])

    def csv_rows(self) -> list:
        """Tidy rows: one per (grid point, replication)."""
        rows = []
        for p in self.points:
            for rec in p.records:
                rows.append({"study": self.study, "point": p.label, **rec})
        return rows

    def to_csv(self) -> str:
        rows = self.csv_rows()
        keys = []
        for row in rows:
            keys.extend(k for k in row if k not in keys)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()


def _dgp_dict(spec: DgpSpec) -> dict:
    d = asdict(spec)
    d["shape"] = list(spec.shape)
    if spec.signal is not None:
        d["signal"] = list(spec.signal)
    return d


def _map(fn, items, threads):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _stats(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {
        "mean": float(v.mean()),
        "var": float(v.var(ddof=1)) if v.size > 1 else 0.0,
        "median": float(np.median(v)),
        "q90": float(np.quantile(v, 0.9)),
        "q99": float(np.quantile(v, 0.99)),
        "max": float(v.max()),
    }


def _histogram(values, bins=40) -> dict:
    counts, edges = np.histogram(np.asarray(values, dtype=np.float64), bins=bins)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


# --- per-replication kernels -------------------------------------------------


def _rep_fit_complexity(y, truth, spec, rep, opts):
    rec = {}
    for r in range(1, spec.rank + 1):
        rec[f"r2_tpca_R{r}"] = tpca_fit(y, r).r_squared
        pool = [j for j in range(y.ndim) if j != spec.time_mode]
        rec[f"r2_pooled_R{r}"] = pooled_pca_fit(y, pool, r).r_squared
    return rec


def _rep_tpca_vs_als(y, truth, spec, rep, opts):
    fit_rank = opts.get("fit_rank", 1)
    tp = tpca_fit(y, fit_rank)
    als = als_fit(
        y,
        fit_rank,
        AlsOptions(
            seed=int(np.random.SeedSequence(spec.seed, spawn_key=(1, rep)).generate_state(1)[0]),
            max_iter=opts.get("max_iter", 500),
            rel_fit_tol=opts.get("rel_fit_tol", 1e-8),
            init=opts.get("init", "random-uniform"),
        ),
    )
    rec = {"als_sweeps": als.n_iter, "als_converged": als.converged}
    for j in range(y.ndim):
        rec[f"tpca_loss_mode{j}"] = l2_loss(tp.modes[j][:, 0], truth.modes[j][:, 0])
        rec[f"als_loss_mode{j}"] = l2_loss(als.model.modes[j][:, 0], truth.modes[j][:, 0])
    return rec


def _rep_rate_scaling(y, truth, spec, rep, opts):
    fit = tpca_fit(y, spec.rank)
    rec = {}
    for j in range(y.ndim):
        rec[f"loss_mode{j}"] = l2_loss(fit.modes[j][:, 0], truth.modes[j][:, 0])
        for i, sig in enumerate(truth.scales):
            if sig > 0:  # undefined for a switched-off component
                rec[f"scale_z_mode{j}_r{i + 1}"] = (fit.per_mode_scales[j, i] - sig**2) / sig
    return rec


def _rep_test_power(y, truth, spec, rep, opts):
    ladders = mode_ladders(y)
    alpha = opts["alpha"]
    rec = {}
    for K in opts["K"]:
        tspec = TestSpec(opts["k"], K, opts["m"], opts["null_seed"], opts.get("null_dim"))
        res = test_num_factors(y, tspec, nulls=opts["_nulls"], ladders=ladders)
        for j, p in enumerate(res.per_mode_pvalues):
            rec[f"K{K}_p_mode{j}"] = float(p)
            rec[f"K{K}_reject_mode{j}"] = bool(p <= alpha)
        for rule in COMBINATION_RULES:
            rec[f"K{K}_p_{rule}"] = res.combined[rule]
            rec[f"K{K}_reject_{rule}"] = bool(res.combined[rule] <= alpha)
    return rec


_KERNELS = {
    "fit-complexity": _rep_fit_complexity,
    "tpca-vs-als": _rep_tpca_vs_als,
    "rate-scaling": _rep_rate_scaling,
    "test-power": _rep_test_power,
}


# --- aggregation -------------------------------------------------------------


def _agg_fit_complexity(point, opts):
    spec = point.dgp
    curves = {"tpca": [], "pooled": []}
    for r in range(1, spec.rank + 1):
        for approach, pooled in (("tpca", False), ("pooled", True)):
            vals = [rec[f"r2_{approach}_R{r}"] for rec in point.records]
            curves[approach].append(
                {
                    "rank": r,
                    "n_params": int(round(model_complexity(spec.shape, r, pooled, spec.time_mode) * math.prod(spec.shape))),
                    "complexity": model_complexity(spec.shape, r, pooled, spec.time_mode),
                    "mean_r2": float(np.mean(vals)),
                }
            )
    return {"curves": curves}


def _agg_losses(point, opts, prefixes):
    out = {}
    for prefix in prefixes:
        for j in range(len(point.dgp.shape)):
            vals = [rec[f"{prefix}_mode{j}"] for rec in point.records]
            out[f"{prefix}_mode{j}"] = {**_stats(vals), "histogram": _histogram(vals)}
    return out


def _agg_tpca_vs_als(point, opts):
    out = _agg_losses(point, opts, ("tpca_loss", "als_loss"))
    out["als_converged_rate"] = float(np.mean([rec["als_converged"] for rec in point.records]))
    return out


def _agg_rate_scaling(point, opts):
    out = _agg_losses(point, opts, ("loss",))
    for key in point.records[0]:
        if key.startswith("scale_z"):
            vals = [rec[key] for rec in point.records]
            out[key] = _stats(vals)
    return out


def _agg_test_power(point, opts):
    n = len(point.records)
    out = {}
    for key in point.records[0]:
        if "_reject_" in key:
            rate = float(np.mean([rec[key] for rec in point.records]))
            out[key.replace("_reject_", "_rate_")] = {
                "rate": rate,
                "se": math.sqrt(rate * (1 - rate) / n),
            }
    return out


_AGGREGATORS = {
    "fit-complexity": _agg_fit_complexity,
    "tpca-vs-als": _agg_tpca_vs_als,
    "rate-scaling": _agg_rate_scaling,
    "test-power": _agg_test_power,
}


def _label(spec: DgpSpec) -> str:
    parts = ["x".join(str(n) for n in spec.shape), f"R{spec.rank}"]
    if spec.signal is not None:
        parts.append("d=" + ",".join(f"{s:g}" for s in spec.signal))
    if spec.error_dist != "gaussian":
        parts.append(f"t{spec.df:g}")
    return "_".join(parts)


def run_mc_study(study: str, grid, reps: int, seed: int, options: dict | None = None, threads: int = 1) -> McSummary:
    """Run a Monte Carlo study over a grid of DGP specifications.

    Parameters
    ----------
    study : {"fit-complexity", "tpca-vs-als", "rate-scaling", "test-power"}
    grid : sequence of DgpSpec
        One entry per grid point. Each point's ``seed`` is replaced by a value
        derived from ``seed`` and the point index. Signals are drawn once per
        point and held fixed; only the noise changes across replications.
    reps : int
    seed : int
    options : dict, optional
        Study options. ``tpca-vs-als``: ``fit_rank`` (1), ``init``,
        ``max_iter``, ``rel_fit_tol``. ``test-power``: ``k`` (1), ``K`` (list,
        ``[3, 5, 7]``), ``m`` (5000), ``alpha`` (0.05), ``null_dim``.
        ``rate-scaling`` reports loss ratios of every point against the first.
        Any study: ``common_random_numbers`` (False) gives every grid point the
        same seed, so points of equal shape and rank share loadings, factor
        paths and noise draws and differ only in their parameters. This makes
        differences between neighbouring points much less noisy.
    threads : int
        Worker threads for replications; results do not depend on it.
    """
    if study not in STUDIES:
        raise DomainError(f"unknown study {study!r}; choose from {STUDIES}")
    if reps < 1:
        raise DomainError("reps must be >= 1")
    opts = dict(options or {})
    if study == "test-power":
        opts.setdefault("k", 1)
        opts.setdefault("K", [3, 5, 7])
        opts.setdefault("m", 5000)
        opts.setdefault("alpha", 0.05)
        opts["K"] = [int(K) for K in np.atleast_1d(opts["K"])]
        opts["null_seed"] = int(np.random.SeedSequence(seed, spawn_key=(2**32,)).generate_state(1)[0])
        opts["_nulls"] = {}
    kernel, aggregate = _KERNELS[study], _AGGREGATORS[study]

    points = []
    for idx, base in enumerate(grid):
        stream = 0 if opts.get("common_random_numbers", False) else idx
        spec = replace(base, seed=int(np.random.SeedSequence(seed, spawn_key=(stream,)).generate_state(1)[0]))
        truth = gen_signal(spec, _rng(spec.seed, 0, 0))
        signal = cp_reconstruct(truth).data

        def one(rep, spec=spec, truth=truth, signal=signal):
            y = _draw(spec, signal, _rng(spec.seed, 0, rep + 1))
            return {"rep": rep, **kernel(y, truth, spec, rep, opts)}

        if study == "test-power":
            # null samples are shared read-only by the workers, so build them first
            for K in opts["K"]:
                tspec = TestSpec(opts["k"], K, opts["m"], opts["null_seed"], opts.get("null_dim"))
                for dim in sorted(set(resolve_null_dims(spec.shape, tspec))):
                    key = tspec.null_key(dim)
                    if key not in opts["_nulls"]:
                        opts["_nulls"][key] = simulate_null(tspec, dim, threads=threads)
        point = GridPoint(_label(spec), spec, _map(one, range(reps), threads))
        point.aggregates = aggregate(point, opts)
        points.append(point)

    if study == "rate-scaling" and points:
        base = points[0].aggregates
        for p in points:
            for key, val in list(p.aggregates.items()):
                if key.startswith("loss_mode") and key in base:
                    p.aggregates[key]["ratio_to_first"] = val["mean"] / base[key]["mean"]

    public = {k: v for k, v in opts.items() if not k.startswith("_")}
    return McSummary(study, reps, seed, points, public)


def study_from_config(doc: dict):
    """Parse an ``mc-study/1`` document into ``run_mc_study`` keyword arguments.

    The document holds ``study``, ``reps``, ``seed``, a base ``dgp`` mapping,
    a ``grid`` list of per-point overrides, and optional ``options``.
    """
    if doc.get("schema", "mc-study/1") != "mc-study/1":
        raise DomainError(f"unexpected schema {doc.get('schema')!r}")
    for key in ("study", "reps", "seed"):
        if key not in doc:
            raise DomainError(f"study config is missing {key!r}")
    base = dict(doc.get("dgp", {}))
    overrides = doc.get("grid") or [{}]
    grid = []
    for o in overrides:
        merged = {**base, **o}
        if "shape" not in merged:
            raise DomainError("every grid point needs a shape")
        merged.pop("seed", None)
        try:
            grid.append(DgpSpec(**merged))
        except TypeError as exc:
            raise DomainError(f"bad dgp entry: {exc}") from exc
    return {
        "study": doc["study"],
        "grid": grid,
        "reps": int(doc["reps"]),
        "seed": int(doc["seed"]),
        "options": doc.get("options", {}),
    }
