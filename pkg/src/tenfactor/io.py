"""Tensor files and JSON result documents.

Two tensor formats are supported:

``tnsr``
    Binary. Magic ``TNSR``, a ``u8`` version (1), a ``u8`` order ``d``,
    ``d`` little-endian ``u64`` dimensions, then ``prod(dims)`` little-endian
    ``f64`` values with the first index varying fastest.
``csv-long``
    Text. Header ``i1,...,id,value`` followed by one row per entry with
    1-based indices. Every cell of the implied dense array must appear once.

Result documents are JSON with a ``schema`` tag. Floats are written with
Python's shortest round-trip representation, so reading a document back gives
bit-identical values.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from pathlib import Path

import numpy as np

from . import __version__
from .eigen import EigenLadder
from .errors import DomainError, TensorFormatError
from .nfactors import FactorCountResult, NullSample
from .tensor import CpModel, DenseTensor, UnfoldedMatrix
from .tpca import PooledFit, TpcaFit

__all__ = [
    "FORMATS",
    "MAX_ENTRIES",
    "encode_tnsr",
    "decode_tnsr",
    "format_csv_long",
    "parse_csv_long",
    "read_tensor",
    "write_tensor",
    "guess_format",
    "format_matrix_csv",
    "dumps",
    "tpca_to_dict",
    "tpca_from_dict",
    "pooled_to_dict",
    "pooled_from_dict",
    "als_to_dict",
    "als_from_dict",
    "test_to_dict",
    "test_from_dict",
    "nulls_to_dict",
    "nulls_from_dict",
    "load_document",
]

FORMATS = ("tnsr", "csv-long")
MAGIC = b"TNSR"
VERSION = 1
# refuse headers implying more than 2**31 entries (16 GiB of values)
MAX_ENTRIES = 2**31
_HEADER = struct.Struct("<4sBB")


# --- binary -------------------------------------------------------------------


def encode_tnsr(tensor: DenseTensor) -> bytes:
    """Serialize ``tensor`` to TNSR1 bytes."""
    if tensor.ndim > 255:
        raise DomainError("TNSR1 stores at most 255 modes")
    head = _HEADER.pack(MAGIC, VERSION, tensor.ndim)
    dims = struct.pack(f"<{tensor.ndim}Q", *tensor.shape)
    return head + dims + tensor.data.astype("<f8").tobytes()


def decode_tnsr(buf: bytes) -> DenseTensor:
    """Parse TNSR1 bytes; malformed input raises :class:`TensorFormatError`."""
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise TensorFormatError("truncated header", len(buf))
    magic, version, d = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise TensorFormatError(f"unsupported version {version}", 4)
    if d == 0:
        raise TensorFormatError("tensor order must be >= 1", 5)
    pos = _HEADER.size
    if len(buf) < pos + 8 * d:
        raise TensorFormatError(f"truncated dimension list (need {d} dims)", len(buf))
    dims = struct.unpack_from(f"<{d}Q", buf, pos)
    for i, n in enumerate(dims):
        if n == 0:
            raise TensorFormatError(f"dimension {i + 1} is zero", pos + 8 * i)
    pos += 8 * d
    total = 1
    for n in dims:
        total *= n
        if total > MAX_ENTRIES:
            raise TensorFormatError(f"dimensions {dims} overflow the entry limit", _HEADER.size)
    end = pos + 8 * total
    if len(buf) < end:
        raise TensorFormatError(
            f"truncated data: expected {total} values, file holds {(len(buf) - pos) // 8}",
            len(buf),
        )
    if len(buf) > end:
        raise TensorFormatError(f"{len(buf) - end} trailing bytes after the data", end)
    data = np.frombuffer(buf, dtype="<f8", count=total, offset=pos)
    return DenseTensor(dims, data.astype(np.float64))


# --- csv long -----------------------------------------------------------------


def format_csv_long(tensor: DenseTensor) -> str:
    """Long-format CSV text, rows in storage order (first index fastest)."""
    d = tensor.ndim
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow([f"i{k + 1}" for k in range(d)] + ["value"])
    idx = np.unravel_index(np.arange(tensor.size), tensor.shape, order="F")
    for pos in range(tensor.size):
        w.writerow([int(idx[k][pos]) + 1 for k in range(d)] + [repr(float(tensor.data[pos]))])
    return out.getvalue()


def parse_csv_long(text: str) -> DenseTensor:
    """Parse long-format CSV into a dense tensor.

    The shape is the per-column maximum index. Missing cells, duplicates and
    malformed rows raise :class:`TensorFormatError` with the line number.
    """
    rows = csv.reader(io.StringIO(text))
    try:
        header = next(rows)
    except StopIteration:
        raise TensorFormatError("empty CSV input", 1) from None
    header = [h.strip() for h in header]
    d = len(header) - 1
    expected = [f"i{k + 1}" for k in range(d)] + ["value"]
    if d < 1 or header != expected:
        raise TensorFormatError(f"header must be {','.join(expected) if d >= 1 else 'i1,...,id,value'}", 1)

    indices, values = [], []
    for line, row in enumerate(rows, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != d + 1:
            raise TensorFormatError(f"expected {d + 1} fields, got {len(row)}", line)
        try:
            idx = tuple(int(c) for c in row[:d])
            val = float(row[d])
        except ValueError:
            raise TensorFormatError(f"unparseable row {row!r}", line) from None
        if any(i < 1 for i in idx):
            raise TensorFormatError(f"indices are 1-based, got {idx}", line)
        if not math.isfinite(val):
            raise TensorFormatError(f"non-finite value {row[d]!r}", line)
        indices.append(idx)
        values.append(val)
    if not indices:
        raise TensorFormatError("no data rows", 2)

    idx = np.array(indices, dtype=np.int64) - 1
    shape = tuple(int(n) for n in idx.max(axis=0) + 1)
    total = 1
    for n in shape:
        total *= n
        if total > MAX_ENTRIES:
            raise TensorFormatError(f"implied shape {shape} overflows the entry limit")
    flat = np.ravel_multi_index(tuple(idx.T), shape, order="F")
    seen = np.zeros(total, dtype=bool)
    data = np.empty(total)
    for line, (pos, val) in enumerate(zip(flat, values), start=2):
        if seen[pos]:
            dup = tuple(int(i) + 1 for i in np.unravel_index(pos, shape, order="F"))
            raise TensorFormatError(f"duplicate cell {dup}", line)
        seen[pos] = True
        data[pos] = val
    if not seen.all():
        first = int(np.argmin(seen))
        missing = tuple(int(i) + 1 for i in np.unravel_index(first, shape, order="F"))
        raise TensorFormatError(
            f"missing cell {missing}: {total - int(seen.sum())} of {total} entries absent"
        )
    return DenseTensor(shape, data)


# --- files --------------------------------------------------------------------


def guess_format(path) -> str:
    """``csv-long`` for ``.csv`` files, otherwise ``tnsr``."""
    return "csv-long" if str(path).lower().endswith(".csv") else "tnsr"


def read_tensor(path, format: str | None = None) -> DenseTensor:
    """Read a tensor file; ``format`` defaults to a guess from the extension."""
    fmt = format or guess_format(path)
    if fmt not in FORMATS:
        raise DomainError(f"unknown format {fmt!r}; choose from {FORMATS}")
    path = Path(path)
    if fmt == "tnsr":
        return decode_tnsr(path.read_bytes())
    return parse_csv_long(path.read_text(encoding="utf-8"))


def write_tensor(path, tensor: DenseTensor, format: str | None = None) -> None:
    fmt = format or guess_format(path)
    if fmt not in FORMATS:
        raise DomainError(f"unknown format {fmt!r}; choose from {FORMATS}")
    path = Path(path)
    if fmt == "tnsr":
        path.write_bytes(encode_tnsr(tensor))
    else:
        path.write_text(format_csv_long(tensor), encoding="utf-8")


def format_matrix_csv(m) -> str:
    """Plain CSV of a matrix, one row per line, no header."""
    values = m.values if isinstance(m, UnfoldedMatrix) else np.asarray(m)
    return "".join(",".join(_num(v) for v in row) + "\n" for row in values)


def _num(v) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


# --- JSON documents -----------------------------------------------------------


def dumps(doc: dict) -> str:
    """Deterministic JSON text (fixed key order, no NaN/inf)."""
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _floats(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def _matrix(a) -> np.ndarray:
    m = np.array(a, dtype=np.float64)
    if m.ndim != 2:
        raise DomainError("expected a row-major 2-d array")
    return m


def _check_schema(doc, schema):
    if doc.get("schema") != schema:
        raise DomainError(f"expected schema {schema!r}, got {doc.get('schema')!r}")


def _header(schema, estimator=None, seed=None):
    head = {"schema": schema}
    if estimator is not None:
        head["estimator"] = estimator
    head["version"] = __version__
    head["seed"] = None if seed is None else int(seed)
    return head


def _model_fields(model: CpModel) -> dict:
    return {
        "shape": list(model.shape),
        "R": model.rank,
        "scales": _floats(model.scales),
        "modes": [m.tolist() for m in model.modes],
    }


def _model_from(doc) -> CpModel:
    modes = tuple(_matrix(m) for m in doc["modes"])
    model = CpModel(modes, np.array(doc["scales"], dtype=np.float64))
    if list(model.shape) != list(doc["shape"]) or model.rank != doc["R"]:
        raise DomainError("mode matrices disagree with shape or R")
    return model


def tpca_to_dict(fit: TpcaFit, seed=None, extra: dict | None = None) -> dict:
    """``tpca-result/1`` document for a tensor PCA fit."""
    doc = _header("tpca-result/1", "tpca", seed)
    doc.update(_model_fields(fit.model))
    doc.update(
        {
            "scale_rule": fit.scale_rule,
            "scale_mode": fit.scale_mode,
            "per_mode_scales": [_floats(row) for row in fit.per_mode_scales],
            "projection_scales": _floats(fit.projection_scales),
            "near_degenerate": [bool(lad.near_degenerate) for lad in fit.ladders],
            "r_squared": float(fit.r_squared),
            "residual_fro": float(fit.residual_fro),
        }
    )
    if extra:
        doc.update(extra)
    return doc


def tpca_from_dict(doc: dict) -> TpcaFit:
    _check_schema(doc, "tpca-result/1")
    if doc.get("estimator", "tpca") != "tpca":
        raise DomainError(f"document holds an {doc['estimator']!r} fit, not tpca")
    model = _model_from(doc)
    per_mode = np.array(doc["per_mode_scales"], dtype=np.float64).reshape(model.ndim, model.rank)
    flags = doc.get("near_degenerate") or [False] * model.ndim
    ladders = tuple(
        EigenLadder(per_mode[j].copy(), model.modes[j], j, bool(flags[j])) for j in range(model.ndim)
    )
    return TpcaFit(
        model=model,
        per_mode_scales=per_mode,
        ladders=ladders,
        r_squared=float(doc["r_squared"]),
        residual_fro=float(doc["residual_fro"]),
        scale_rule=doc["scale_rule"],
        scale_mode=doc.get("scale_mode"),
        projection_scales=np.array(doc["projection_scales"], dtype=np.float64),
    )


def pooled_to_dict(fit: PooledFit, seed=None, extra: dict | None = None) -> dict:
    """``pooled-result/1`` document for a pooled 2-way PCA fit."""
    doc = _header("pooled-result/1", "pooled-pca", seed)
    doc.update(
        {
            "shape": list(fit.shape),
            "R": fit.rank,
            "kept_mode": fit.kept_mode,
            "n_params": fit.n_params,
            "scales": _floats(fit.scales),
            "factors": fit.factors.tolist(),
            "loadings": fit.loadings.tolist(),
            "r_squared": float(fit.r_squared),
            "residual_fro": float(fit.residual_fro),
        }
    )
    if extra:
        doc.update(extra)
    return doc


def pooled_from_dict(doc: dict) -> PooledFit:
    _check_schema(doc, "pooled-result/1")
    return PooledFit(
        kept_mode=int(doc["kept_mode"]),
        shape=tuple(int(n) for n in doc["shape"]),
        factors=_matrix(doc["factors"]),
        loadings=_matrix(doc["loadings"]),
        scales=np.array(doc["scales"], dtype=np.float64),
        r_squared=float(doc["r_squared"]),
        residual_fro=float(doc["residual_fro"]),
    )


def als_to_dict(result, opts, r_squared=None, extra: dict | None = None) -> dict:
    """``tpca-result/1`` document tagged ``estimator: "als"`` with the trace."""
    doc = _header("tpca-result/1", "als", opts.seed)
    doc.update(_model_fields(result.model))
    doc.update(
        {
            "options": {
                "max_iter": opts.max_iter,
                "rel_fit_tol": opts.rel_fit_tol,
                "init": opts.init,
            },
            "r_squared": None if r_squared is None else float(r_squared),
            "converged": bool(result.converged),
            "stalled": bool(result.stalled),
            "trace": _floats(result.trace),
            "jitter": _floats(result.jitter),
        }
    )
    if extra:
        doc.update(extra)
    return doc


def als_from_dict(doc: dict):
    """Rebuild ``(AlsResult, AlsOptions)`` from an ALS document."""
    from .als import AlsOptions, AlsResult

    _check_schema(doc, "tpca-result/1")
    if doc.get("estimator") != "als":
        raise DomainError("document does not hold an ALS fit")
    opts = AlsOptions(seed=int(doc["seed"]), **doc["options"])
    result = AlsResult(
        _model_from(doc),
        [float(v) for v in doc["trace"]],
        [float(v) for v in doc["jitter"]],
        bool(doc["converged"]),
        bool(doc["stalled"]),
    )
    return result, opts


def test_to_dict(res: FactorCountResult, extra: dict | None = None) -> dict:
    """``factor-test/1`` document; infinite statistics are written as ``null``."""
    doc = _header("factor-test/1", None, res.seed)
    doc.update(
        {
            "k": res.k,
            "K": res.K,
            "m": res.m,
            "null_dims": list(res.null_dims),
            "per_mode_stats": [None if math.isinf(s) else float(s) for s in res.per_mode_stats],
            "diverged": list(res.diverged),
            "per_mode_pvalues": _floats(res.per_mode_pvalues),
            "floored": list(res.floored),
            "combined": dict(res.combined),
            "dimension_warnings": list(res.dimension_warnings),
        }
    )
    if extra:
        doc.update(extra)
    return doc


test_to_dict.__test__ = False


def test_from_dict(doc: dict) -> FactorCountResult:
    _check_schema(doc, "factor-test/1")
    stats = [math.inf if s is None else float(s) for s in doc["per_mode_stats"]]
    return FactorCountResult(
        per_mode_stats=np.array(stats),
        per_mode_pvalues=np.array(doc["per_mode_pvalues"], dtype=np.float64),
        combined={k: float(v) for k, v in doc["combined"].items()},
        k=int(doc["k"]),
        K=int(doc["K"]),
        m=int(doc["m"]),
        seed=int(doc["seed"]),
        null_dims=tuple(int(n) for n in doc["null_dims"]),
        diverged=tuple(bool(v) for v in doc["diverged"]),
        floored=tuple(bool(v) for v in doc["floored"]),
        dimension_warnings=tuple(doc.get("dimension_warnings", ())),
    )


test_from_dict.__test__ = False


def nulls_to_dict(nulls: dict) -> dict:
    """``null-sample/1`` document holding every cached null sample.

    ``nulls`` is the cache used by :func:`~tenfactor.nfactors.test_num_factors`;
    samples are written sorted by key.
    """
    samples = []
    for key in sorted(nulls):
        s = nulls[key]
        samples.append(
            {
                "k": s.k,
                "K": s.K,
                "m": s.m,
                "seed": int(s.seed),
                "null_dim": s.null_dim,
                "values": _floats(s.values),
            }
        )
    return {"schema": "null-sample/1", "version": __version__, "samples": samples}


def nulls_from_dict(doc: dict) -> dict:
    """Inverse of :func:`nulls_to_dict`, keyed like the test's cache."""
    _check_schema(doc, "null-sample/1")
    out = {}
    for s in doc["samples"]:
        values = np.array(s["values"], dtype=np.float64)
        if values.size != s["m"] or np.any(np.diff(values) < 0):
            raise DomainError("null sample must hold m sorted values")
        sample = NullSample(values, int(s["k"]), int(s["K"]), int(s["null_dim"]), int(s["seed"]))
        out[(sample.k, sample.K, sample.m, sample.seed, sample.null_dim)] = sample
    return out


_LOADERS = {
    "tpca-result/1": lambda d: als_from_dict(d)[0] if d.get("estimator") == "als" else tpca_from_dict(d),
    "pooled-result/1": pooled_from_dict,
    "factor-test/1": test_from_dict,
    "null-sample/1": nulls_from_dict,
}


def load_document(path_or_doc):
    """Parse any result document into its library object.

    ``mc-study/1`` documents are handled by :meth:`~tenfactor.simulate.McSummary.from_dict`.
    """
    doc = path_or_doc
    if not isinstance(doc, dict):
        doc = json.loads(Path(path_or_doc).read_text(encoding="utf-8"))
    schema = doc.get("schema")
    if schema == "mc-study/1":
        from .simulate import McSummary

        return McSummary.from_dict(doc)
    if schema not in _LOADERS:
        raise DomainError(f"unknown schema {schema!r}")
    return _LOADERS[schema](doc)
