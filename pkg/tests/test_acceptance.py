"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run the fast criteria with ``pytest tests/test_acceptance.py -m "not slow"``
and the power study with ``-m slow``. The report lines also appear in the
terminal summary under "acceptance criteria".
"""

import math
import time

import numpy as np
import pytest

from tenfactor import CpModel, DenseTensor, cp_reconstruct, khatri_rao, tpca_fit, unfold
from tenfactor.als import AlsOptions, als_fit
from tenfactor.cli import main
from tenfactor.simulate import DgpSpec, gen_dgp, l2_loss, run_mc_study

from conftest import (
    ACCEPTANCE_LINES,
    EXAMPLE1,
    EXAMPLE1_UNFOLDINGS,
    EXAMPLE2,
    EXAMPLE2_UNFOLDINGS,
    aligned_l2,
    exact_rank_model,
    orthonormal,
)


def report(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# --- 1: model complexity grid -------------------------------------------------

# (T, N, J) -> displayed percentages for 1..10 factors, d-way row then pooled row
COMPLEXITY_GRID = {
    (100, 30, 20): (
        "0.25 0.5 0.75 1 1.25 1.5 1.75 2 2.25 2.5",
        "1.17 2.33 3.5 4.67 5.83 7 8.17 9.33 10.5 11.67",
    ),
    (50, 50, 50): (
        "0.12 0.24 0.36 0.48 0.60 0.72 0.84 0.96 1.08 1.2",
        "2.04 4.08 6.12 8.16 10.2 12.24 14.28 16.32 18.36 20.4",
    ),
    (50, 100, 100): (
        "0.05 0.1 0.15 0.2 0.25 0.3 0.35 0.4 0.45 0.5",
        "2.01 4.02 6.03 8.04 10.05 12.06 14.07 16.08 18.09 20.1",
    ),
}


def test_criterion_1_model_complexity(capsys):
    start = time.perf_counter()
    mismatches = []
    total = 0
    for shape, rows in COMPLEXITY_GRID.items():
        for row, pooled in zip(rows, (False, True)):
            for rank, expected in enumerate(row.split(), start=1):
                digits = len(expected.partition(".")[2])
                argv = ["complexity", "--shape", ",".join(map(str, shape)), "--rank", str(rank), "--digits", str(digits)]
                if pooled:
                    argv.append("--pooled")
                code = main(argv)
                got = capsys.readouterr().out.strip()
                total += 1
                if code != 0 or got != expected + "%":
                    mismatches.append((shape, rank, pooled, got, expected))
    elapsed = time.perf_counter() - start
    ok = total == 60 and not mismatches and elapsed < 1.0
    with capsys.disabled():
        report(1, "model complexity grid", ok, f"{total - len(mismatches)}/{total} entries exact, {elapsed:.2f}s")
    assert not mismatches, mismatches
    assert total == 60 and elapsed < 1.0


# --- 2: unfolding fixtures ----------------------------------------------------


def test_criterion_2_unfolding_fixtures():
    start = time.perf_counter()
    checks = [
        np.array_equal(unfold(t, j).values, expected)
        for t, fixtures in ((EXAMPLE1, EXAMPLE1_UNFOLDINGS), (EXAMPLE2, EXAMPLE2_UNFOLDINGS))
        for j, expected in enumerate(fixtures)
    ]
    elapsed = time.perf_counter() - start
    ok = all(checks) and len(checks) == 6 and elapsed < 1.0
    report(2, "unfolding fixtures", ok, f"{sum(checks)}/6 unfoldings exact, {elapsed:.3f}s")
    assert ok


# --- 3: noiseless recovery ----------------------------------------------------


def test_criterion_3_noiseless_recovery():
    rng = np.random.default_rng(3)
    cases = [
        ((5, 4, 3), [2.0]),
        ((12, 9, 7), [9.0, 4.0]),
        ((20, 15, 10), [30.0, 20.0, 10.0]),
        ((50, 40, 30), [5.0, 3.0, 1.0]),
        ((50, 50, 50), [100.0, 60.0, 25.0]),
    ]
    start = time.perf_counter()
    worst_vec = worst_scale = 0.0
    for shape, scales in cases:
        truth = exact_rank_model(rng, shape, scales)
        fit = tpca_fit(cp_reconstruct(truth), len(scales))
        for est, true in zip(fit.modes, truth.modes):
            for r in range(len(scales)):
                worst_vec = max(worst_vec, aligned_l2(est[:, r], true[:, r]))
        rel = np.abs(np.abs(fit.scales) - scales) / scales
        worst_scale = max(worst_scale, float(rel.max()))
    elapsed = time.perf_counter() - start
    ok = worst_vec < 1e-8 and worst_scale < 1e-8 and elapsed < 10.0
    report(3, "noiseless recovery", ok, f"max l2 {worst_vec:.1e}, max scale rel err {worst_scale:.1e}, {elapsed:.2f}s")
    assert ok


# --- 4: Khatri-Rao of orthonormal collections ---------------------------------


def test_criterion_4_khatri_rao_orthonormality():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(3, 6))
        rank = int(rng.integers(1, 5))
        mats = [orthonormal(rng, int(rng.integers(rank, 7)), rank) for _ in range(d)]
        for skip in [None, *range(d)]:
            kr = khatri_rao(mats, skip=skip)
            worst = max(worst, float(np.abs(kr.T @ kr - np.eye(rank)).max()))
    ok = worst <= 1e-12
    report(4, "Khatri-Rao orthonormality", ok, f"100 collections, max deviation {worst:.1e}")
    assert ok


# --- 5: rate scaling ----------------------------------------------------------

# mode 0 holds the time factor f, mode 1 the loadings lambda, mode 2 the loadings mu
RATE_NAMES = ("f", "lambda", "mu")


def test_criterion_5_rate_scaling():
    grid = [DgpSpec((100, 30, 20)), DgpSpec((200, 60, 40)), DgpSpec((100, 60, 20))]
    summary = run_mc_study("rate-scaling", grid, reps=500, seed=2024)
    doubled, one = summary.points[1].aggregates, summary.points[2].aggregates
    ratios = {
        "doubled": [doubled[f"loss_mode{j}"]["ratio_to_first"] for j in range(3)],
        "N doubled": [one[f"loss_mode{j}"]["ratio_to_first"] for j in range(3)],
    }
    targets = {"doubled": (0.5, 0.5, 0.5), "N doubled": (1 / math.sqrt(2), 1.0, 1 / math.sqrt(2))}
    ok = all(abs(r - t) <= 0.1 for key in ratios for r, t in zip(ratios[key], targets[key]))
    detail = "; ".join(
        f"{key}: " + ", ".join(f"{n} {r:.3f}" for n, r in zip(RATE_NAMES, ratios[key])) for key in ratios
    )
    report(5, "rate scaling", ok, detail)
    assert ok


# --- 6: scale CLT -------------------------------------------------------------


def test_criterion_6_scale_clt():
    spec = DgpSpec((60, 80, 100), rank=1, s_u=1.0)
    summary = run_mc_study("rate-scaling", [spec], reps=1000, seed=606)
    agg = summary.points[0].aggregates
    variances = [agg[f"scale_z_mode{j}_r1"]["var"] / spec.s_u**2 for j in range(3)]
    ok = all(3.4 <= v <= 4.6 for v in variances)
    report(6, "scale CLT variance", ok, "per-mode variance " + ", ".join(f"{v:.3f}" for v in variances))
    assert ok


# --- 7: test size and power ---------------------------------------------------

POWER_GRID = (0.0, 0.03, 0.05, 0.06, 0.08, 0.1, 2.0)


@pytest.mark.slow
def test_criterion_7_test_size_and_power():
    grid = [DgpSpec((60, 80, 100), rank=2, signal=(2.0, d2)) for d2 in POWER_GRID]
    # neighbouring grid points share loadings, factors and noise so their
    # rejection rates differ only through d_2
    options = {"k": 1, "K": [3], "m": 2000, "common_random_numbers": True}
    summary = run_mc_study("test-power", grid, reps=2000, seed=77, options=options)
    rates = np.array([[p.aggregates[f"K3_rate_mode{j}"]["rate"] for j in range(3)] for p in summary.points])
    ses = np.array([[p.aggregates[f"K3_rate_mode{j}"]["se"] for j in range(3)] for p in summary.points])
    size_ok = bool(np.all((rates[0] >= 0.03) & (rates[0] <= 0.07)))
    power_ok = bool(np.all(rates[-1] > 0.95))
    slack = 2 * np.hypot(ses[1:], ses[:-1])
    monotone_ok = bool(np.all(rates[1:] >= rates[:-1] - slack))
    ok = size_ok and power_ok and monotone_ok
    curve = " ".join(f"{d2:g}:{rates[i].min():.3f}-{rates[i].max():.3f}" for i, d2 in enumerate(POWER_GRID))
    report(7, "test size and power", ok, f"size {size_ok}, power {power_ok}, monotone {monotone_ok}; d2:rates {curve}")
    assert size_ok, rates[0]
    assert power_ok, rates[-1]
    assert monotone_ok, rates


# --- 8: first-factor stability ------------------------------------------------


def test_criterion_8_first_factor_stability():
    y, _ = gen_dgp(DgpSpec((100, 30, 20), rank=3, seed=8))
    one, five = tpca_fit(y, 1), tpca_fit(y, 5)
    tpca_ok = all(np.array_equal(a[:, 0], b[:, 0]) for a, b in zip(one.modes, five.modes))
    tpca_ok = tpca_ok and one.scales[0] == five.scales[0]

    spec = DgpSpec((100, 30, 20), rank=2, seed=88)
    reps = 200
    differs = 0
    for rep in range(reps):
        y, _ = gen_dgp(spec, rep)
        a = als_fit(y, 1, AlsOptions(seed=2 * rep)).model
        b = als_fit(y, 2, AlsOptions(seed=2 * rep + 1)).model
        gap = max(l2_loss(ma[:, 0], mb[:, 0]) for ma, mb in zip(a.modes, b.modes))
        differs += gap > 0.01
    als_ok = differs >= reps / 2
    ok = tpca_ok and als_ok
    report(
        8,
        "first-factor stability",
        ok,
        f"TPCA R=1 vs R=5 bit-identical {tpca_ok}; ALS R=1 vs R=2 differ by l2 > 0.01 in {differs}/{reps} reps",
    )
    assert tpca_ok
    assert als_ok, f"only {differs}/{reps} replications differ"


# --- 9: ALS monotonicity ------------------------------------------------------


def test_criterion_9_als_monotonicity():
    decreases = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = tuple(int(n) for n in rng.integers(3, 9, size=int(rng.integers(3, 5))))
        y = DenseTensor.from_array(rng.standard_normal(shape))
        rank = int(rng.integers(1, 4))
        trace = als_fit(y, rank, AlsOptions(seed=seed, max_iter=100)).trace
        decreases += sum(b < a for a, b in zip(trace, trace[1:]))
    ok = decreases == 0
    report(9, "ALS monotonicity", ok, f"100 tensors, {decreases} decreasing sweeps")
    assert ok
