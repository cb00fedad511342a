"""Command-line interface: ``tenfactor <subcommand> ...``.

Exit status is 0 on success, 1 when the inputs are valid files but the
requested computation is not defined for them (domain or numeric errors), and
2 for usage, I/O and parse errors. Mode numbers on the command line are
1-based.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from . import io as tio
from .als import INIT_METHODS, AlsOptions, als_fit, orthogonalize
from .errors import DomainError, NumericError, TensorFormatError
from .nfactors import TestSpec, test_num_factors
from .simulate import run_mc_study, study_from_config
from .tensor import DenseTensor, unfold
from .tpca import SCALE_RULES, model_complexity, pooled_pca_fit, r_squared, tpca_fit

THREADS_ENV = "TENFACTOR_THREADS"


class UsageError(Exception):
    """Bad command-line values detected after argument parsing."""


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _shape(text):
    try:
        shape = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"shape must look like 100,30,20, got {text!r}") from None
    if any(n < 1 for n in shape):
        raise argparse.ArgumentTypeError("all dimensions must be positive")
    return shape


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env is None or env == "":
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    return n


def _mode0(mode, ndim, flag):
    if not 1 <= mode <= ndim:
        raise DomainError(f"{flag} {mode} out of range for a {ndim}-way tensor (modes are 1-based)")
    return mode - 1


def _load(args) -> DenseTensor:
    y = tio.read_tensor(args.input, args.format)
    if getattr(args, "demean", None) is not None:
        j = _mode0(args.demean, y.ndim, "--demean")
        arr = y.array
        y = DenseTensor.from_array(arr - arr.mean(axis=j, keepdims=True))
    return y


def _preprocessing(args) -> dict:
    return {"preprocessing": {"demean_mode": getattr(args, "demean", None)}}


def _emit(text: str, output):
    if output is None or output == "-":
        sys.stdout.write(text)
    else:
        Path(output).write_text(text, encoding="utf-8")


# --- subcommands --------------------------------------------------------------


def cmd_unfold(args):
    y = tio.read_tensor(args.input, args.format)
    j = _mode0(args.mode, y.ndim, "--mode")
    _emit(tio.format_matrix_csv(unfold(y, j)), args.output)


def cmd_tpca(args):
    y = _load(args)
    scale_mode = None
    if args.scale_mode is not None:
        scale_mode = _mode0(args.scale_mode, y.ndim, "--scale-mode")
    fit = tpca_fit(y, args.rank, args.scale_rule, scale_mode)
    _emit(tio.dumps(tio.tpca_to_dict(fit, args.seed, _preprocessing(args))), args.output)


def cmd_pooled(args):
    y = _load(args)
    kept = _mode0(args.keep, y.ndim, "--keep")
    fit = pooled_pca_fit(y, [j for j in range(y.ndim) if j != kept], args.rank)
    _emit(tio.dumps(tio.pooled_to_dict(fit, args.seed, _preprocessing(args))), args.output)


def cmd_als(args):
    y = _load(args)
    opts = AlsOptions(seed=args.seed, max_iter=args.max_iter, rel_fit_tol=args.tol, init=args.init)
    res = als_fit(y, args.rank, opts)
    extra = _preprocessing(args)
    model = res.model
    if args.orthogonalize:
        model = orthogonalize(model)
        extra["orthogonalized"] = {
            "scales": model.scales.tolist(),
            "modes": [m.tolist() for m in model.modes],
        }
    doc = tio.als_to_dict(res, opts, r_squared(res.model, y), extra)
    _emit(tio.dumps(doc), args.output)


def cmd_test(args):
    y = _load(args)
    spec = TestSpec(args.k, args.K, args.m, args.seed, args.null_dim)
    nulls = {}
    cache = Path(args.null_cache) if args.null_cache else None
    if cache is not None and cache.exists():
        nulls = tio.nulls_from_dict(json.loads(cache.read_text(encoding="utf-8")))
    with warnings.catch_warnings():
        # dimension warnings are reported inside the result document
        warnings.simplefilter("ignore", UserWarning)
        res = test_num_factors(y, spec, nulls=nulls, threads=_threads(args))
    if cache is not None:
        cache.write_text(tio.dumps(tio.nulls_to_dict(nulls)), encoding="utf-8")
    extra = _preprocessing(args)
    extra["alpha"] = args.alpha
    extra["reject"] = {rule: bool(res.reject(args.alpha, rule)) for rule in res.combined}
    doc = tio.test_to_dict(res, extra)
    _emit(tio.dumps(doc), args.output)


def cmd_simulate(args):
    try:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise TensorFormatError(f"config is not valid JSON: {exc.msg}", exc.pos) from None
    if not isinstance(doc, dict):
        raise TensorFormatError("config must be a JSON object")
    cfg = study_from_config(doc)
    if args.reps is not None:
        cfg["reps"] = args.reps
    if args.seed is not None:
        cfg["seed"] = args.seed
    summary = run_mc_study(threads=_threads(args), **cfg)
    _emit(tio.dumps(summary.to_dict()), args.output)
    if args.csv:
        Path(args.csv).write_text(summary.to_csv(), encoding="utf-8")


def cmd_complexity(args):
    if args.kept_mode is not None:
        kept = _mode0(args.kept_mode, len(args.shape), "--kept-mode")
    else:
        kept = 0
    frac = model_complexity(args.shape, args.rank, args.pooled, kept)
    _emit(f"{100 * frac:.{args.digits}f}%\n", args.output)


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tenfactor", description="Tensor PCA for d-way factor models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def tensor_cmd(name, help_text, func):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("input", help="tensor file (.tnsr or .csv)")
        sp.add_argument("--format", choices=tio.FORMATS, help="input format (default: by extension)")
        sp.add_argument("-o", "--output", help="output path (default: stdout)")
        sp.set_defaults(func=func)
        return sp

    def demean(sp):
        sp.add_argument("--demean", type=_positive_int, metavar="MODE",
                        help="subtract the mean along MODE (1-based) before fitting")

    sp = tensor_cmd("unfold", "write the mode-j unfolding as CSV", cmd_unfold)
    sp.add_argument("--mode", type=_positive_int, required=True, help="mode to unfold (1-based)")

    sp = tensor_cmd("tpca", "fit a tensor factor model by tensor PCA", cmd_tpca)
    sp.add_argument("--rank", type=_positive_int, required=True)
    sp.add_argument("--scale-rule", choices=SCALE_RULES, default="largest-mode")
    sp.add_argument("--scale-mode", type=_positive_int, help="mode for --scale-rule per-mode (1-based)")
    sp.add_argument("--seed", type=_seed, help="recorded in the output; the fit is deterministic")
    demean(sp)

    sp = tensor_cmd("pooled-pca", "2-way PCA after pooling all but one mode", cmd_pooled)
    sp.add_argument("--rank", type=_positive_int, required=True)
    sp.add_argument("--keep", type=_positive_int, default=1, help="mode left un-pooled (1-based, default 1)")
    sp.add_argument("--seed", type=_seed, help="recorded in the output; the fit is deterministic")
    demean(sp)

    sp = tensor_cmd("als", "fit a CP model by alternating least squares", cmd_als)
    sp.add_argument("--rank", type=_positive_int, required=True)
    sp.add_argument("--seed", type=_seed, required=True)
    sp.add_argument("--max-iter", type=_positive_int, default=500)
    sp.add_argument("--tol", type=float, default=1e-8, help="stop when the fit changes by less")
    sp.add_argument("--init", choices=INIT_METHODS, default="random-uniform")
    sp.add_argument("--orthogonalize", action="store_true", help="also report Gram-Schmidt modes")
    demean(sp)

    sp = tensor_cmd("test", "test the number of factors", cmd_test)
    sp.add_argument("--k", type=int, required=True, help="factors under the null")
    sp.add_argument("--K", type=int, required=True, help="largest number of factors under the alternative")
    sp.add_argument("--m", type=_positive_int, default=5000, help="null draws")
    sp.add_argument("--seed", type=_seed, required=True)
    sp.add_argument("--null-dim", type=_positive_int, help="side of the null GOE matrices")
    sp.add_argument("--null-cache", help="JSON file to load and store null samples")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--threads", type=_positive_int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    demean(sp)

    sp = sub.add_parser("simulate", help="run a Monte Carlo study from a JSON config")
    sp.add_argument("config", help="mc-study/1 JSON config")
    sp.add_argument("-o", "--output", help="summary JSON path (default: stdout)")
    sp.add_argument("--csv", help="also write one CSV row per replication here")
    sp.add_argument("--reps", type=_positive_int, help="override the config's reps")
    sp.add_argument("--seed", type=_seed, help="override the config's seed")
    sp.add_argument("--threads", type=_positive_int, help=f"worker threads (default: ${THREADS_ENV} or 1)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("complexity", help="parameter count as a percent of the data size")
    sp.add_argument("--shape", type=_shape, required=True, help="comma-separated dims, e.g. 100,30,20")
    sp.add_argument("--rank", type=_positive_int, required=True)
    sp.add_argument("--pooled", action="store_true", help="pooled 2-way model instead of the d-way one")
    sp.add_argument("--kept-mode", type=_positive_int, help="un-pooled mode for --pooled (1-based, default 1)")
    sp.add_argument("--digits", type=int, default=2, help="decimals in the printed percent")
    sp.add_argument("-o", "--output", help="output path (default: stdout)")
    sp.set_defaults(func=cmd_complexity)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (DomainError, NumericError) as exc:
        print(f"tenfactor: error: {exc}", file=sys.stderr)
        return 1
    except (TensorFormatError, UsageError, OSError) as exc:
        print(f"tenfactor: error: {exc}", file=sys.stderr)
        return 2
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"tenfactor: error: malformed input document: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
