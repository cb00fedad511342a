import json
import math

import numpy as np
import pytest

from tenfactor import DomainError, cp_reconstruct, tpca_fit
from tenfactor.simulate import (
    DgpSpec,
    McSummary,
    gen_ar1_factors,
    gen_dgp,
    gen_noise,
    gen_orthonormal_loadings,
    l2_loss,
    run_mc_study,
    study_from_config,
)


def test_spec_defaults_and_sigmas():
    spec = DgpSpec((100, 30, 20), rank=3)
    np.testing.assert_array_equal(spec.strengths, [3.0, 2.0, 1.0])
    np.testing.assert_allclose(spec.sigmas, np.array([3.0, 2.0, 1.0]) * math.sqrt(60000))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"shape": (5,)},
        {"shape": (5, 4), "rank": 5},
        {"shape": (5, 4), "rho": 1.0},
        {"shape": (5, 4), "s_u": -1.0},
        {"shape": (5, 4), "error_dist": "laplace"},
        {"shape": (5, 4), "error_dist": "student-t", "df": 2.0},
        {"shape": (5, 4), "rank": 2, "signal": (1.0, 2.0)},
        {"shape": (5, 4), "rank": 2, "signal": (1.0,)},
        {"shape": (1, 4), "time_mode": 0},
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(DomainError):
        DgpSpec(**kwargs)


def test_loadings_are_orthonormal_eigenvectors():
    rng = np.random.default_rng(0)
    lam = gen_orthonormal_loadings(30, 4, rng)
    np.testing.assert_allclose(lam.T @ lam, np.eye(4), atol=1e-12)
    # the leading eigenvector of a positive matrix has one sign
    assert np.all(lam[:, 0] > 0)


def test_ar1_factors():
    f = gen_ar1_factors(5000, 2, 0.5, 0.1, np.random.default_rng(1))
    np.testing.assert_allclose(np.linalg.norm(f, axis=0), 1.0)
    lag1 = [np.corrcoef(f[1:, r], f[:-1, r])[0, 1] for r in range(2)]
    np.testing.assert_allclose(lag1, 0.5, atol=0.05)


def test_student_t_noise_has_unit_variance():
    spec = DgpSpec((200, 100, 10), error_dist="student-t", df=5.0, s_u=2.0)
    u = gen_noise(spec, np.random.default_rng(2))
    assert abs(u.var() / 4.0 - 1.0) < 0.05


def test_noiseless_draw_is_the_signal():
    spec = DgpSpec((10, 6, 5), rank=2, s_u=0.0, seed=3)
    y, truth = gen_dgp(spec)
    np.testing.assert_array_equal(y.data, cp_reconstruct(truth).data)


def test_signal_fixed_noise_varies():
    spec = DgpSpec((10, 6, 5), rank=2, seed=3)
    y0, t0 = gen_dgp(spec, 0)
    y1, t1 = gen_dgp(spec, 1)
    for a, b in zip(t0.modes, t1.modes):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(y0.data, y1.data)
    np.testing.assert_array_equal(gen_dgp(spec, 1)[0].data, y1.data)


def test_time_mode_placement():
    spec = DgpSpec((6, 50), rank=1, time_mode=1, seed=0)
    _, truth = gen_dgp(spec)
    assert truth.shape == (6, 50)
    assert np.all(truth.modes[0][:, 0] > 0)  # loadings, not an AR path


def test_l2_loss():
    assert l2_loss([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert l2_loss([-1.0, 0.0], [1.0, 0.0]) == 0.0
    assert math.isclose(l2_loss([0.0, 1.0], [1.0, 0.0]), math.sqrt(2))
    with pytest.raises(DomainError):
        l2_loss([1.0], [1.0, 0.0])


def test_tpca_error_is_small_on_the_dgp():
    y, truth = gen_dgp(DgpSpec((100, 30, 20), rank=1, seed=5))
    fit = tpca_fit(y, 1)
    losses = [l2_loss(fit.modes[j][:, 0], truth.modes[j][:, 0]) for j in range(3)]
    assert max(losses) < 0.1


# --- studies ------------------------------------------------------------------


def test_study_is_reproducible_and_thread_independent():
    grid = [DgpSpec((20, 8, 6), rank=2), DgpSpec((20, 8, 6), rank=2, s_u=2.0)]
    a = run_mc_study("rate-scaling", grid, reps=6, seed=42)
    b = run_mc_study("rate-scaling", grid, reps=6, seed=42, threads=3)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    c = run_mc_study("rate-scaling", grid, reps=6, seed=43)
    assert json.dumps(a.to_dict()) != json.dumps(c.to_dict())


def test_fit_complexity_curves():
    grid = [DgpSpec((30, 10, 8), rank=3)]
    summary = run_mc_study("fit-complexity", grid, reps=4, seed=1)
    curves = summary.points[0].aggregates["curves"]
    r2 = [c["mean_r2"] for c in curves["tpca"]]
    assert all(b >= a for a, b in zip(r2, r2[1:]))
    assert curves["tpca"][0]["n_params"] == 48
    assert curves["pooled"][0]["n_params"] == 80 + 30


def test_tpca_vs_als_records():
    grid = [DgpSpec((20, 8, 6), rank=2)]
    summary = run_mc_study("tpca-vs-als", grid, reps=3, seed=2, options={"max_iter": 50})
    rec = summary.points[0].records[0]
    assert {"tpca_loss_mode0", "als_loss_mode2", "als_sweeps", "als_converged"} <= set(rec)
    assert "histogram" in summary.points[0].aggregates["als_loss_mode1"]


def test_rate_scaling_ratios():
    grid = [DgpSpec((30, 10, 8)), DgpSpec((60, 20, 16))]
    summary = run_mc_study("rate-scaling", grid, reps=20, seed=3)
    assert summary.points[0].aggregates["loss_mode0"]["ratio_to_first"] == 1.0
    ratio = summary.points[1].aggregates["loss_mode0"]["ratio_to_first"]
    assert 0.3 < ratio < 0.7


def test_test_power_output():
    grid = [DgpSpec((12, 15, 20), rank=2, signal=(2.0, 0.0)), DgpSpec((12, 15, 20), rank=2, signal=(2.0, 2.0))]
    summary = run_mc_study("test-power", grid, reps=10, seed=4, options={"K": [3], "m": 200})
    strong = summary.points[1].aggregates
    assert strong["K3_rate_mode2"]["rate"] == 1.0
    assert "K3_rate_min" in strong and "se" in strong["K3_rate_max"]
    assert summary.options["K"] == [3]


def test_summary_round_trip_and_csv():
    summary = run_mc_study("rate-scaling", [DgpSpec((20, 8, 6))], reps=3, seed=5)
    doc = json.loads(json.dumps(summary.to_dict()))
    back = McSummary.from_dict(doc)
    assert back.to_dict() == doc
    lines = summary.to_csv().splitlines()
    assert lines[0].startswith("study,point,rep,loss_mode0")
    assert len(lines) == 4


def test_study_errors():
    with pytest.raises(DomainError):
        run_mc_study("bogus", [DgpSpec((5, 4))], 1, 0)
    with pytest.raises(DomainError):
        run_mc_study("rate-scaling", [DgpSpec((5, 4))], 0, 0)


def test_config_parsing():
    doc = {
        "schema": "mc-study/1",
        "study": "test-power",
        "reps": 5,
        "seed": 9,
        "dgp": {"shape": [60, 80, 100], "rank": 2},
        "grid": [{"signal": [2, 0]}, {"signal": [2, 1]}],
        "options": {"K": [3, 5]},
    }
    cfg = study_from_config(doc)
    assert [g.signal for g in cfg["grid"]] == [(2.0, 0.0), (2.0, 1.0)]
    assert cfg["grid"][0].shape == (60, 80, 100)
    assert cfg["options"] == {"K": [3, 5]}
    with pytest.raises(DomainError):
        study_from_config({"study": "rate-scaling", "reps": 1})
    with pytest.raises(DomainError):
        study_from_config({**doc, "grid": [{"bogus": 1}]})


def test_common_random_numbers_share_draws():
    grid = [DgpSpec((12, 15, 20), rank=2, signal=(2.0, d2)) for d2 in (0.0, 1.0)]
    shared = run_mc_study("rate-scaling", grid, reps=3, seed=6, options={"common_random_numbers": True})
    a, b = (p.dgp for p in shared.points)
    assert a.seed == b.seed
    ya, ta = gen_dgp(a, 2)
    yb, tb = gen_dgp(b, 2)
    for ma, mb in zip(ta.modes, tb.modes):
        np.testing.assert_array_equal(ma, mb)
    # only the second component's strength differs
    np.testing.assert_allclose(yb.data - ya.data, (cp_reconstruct(tb).data - cp_reconstruct(ta).data), atol=1e-9)
    independent = run_mc_study("rate-scaling", grid, reps=3, seed=6)
    assert independent.points[0].dgp.seed != independent.points[1].dgp.seed


def test_zero_strength_component_has_no_scale_statistic():
    summary = run_mc_study("rate-scaling", [DgpSpec((12, 15, 20), rank=2, signal=(2.0, 0.0))], reps=2, seed=1)
    keys = summary.points[0].aggregates
    assert "scale_z_mode0_r1" in keys and "scale_z_mode0_r2" not in keys
