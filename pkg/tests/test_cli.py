import csv

import numpy as np
import pytest

from survadj import StepCurve
from survadj.cli import main
from survadj.dataset import integrate_curve
from survadj.estimators import MethodId


def _write_csv(path, data_rows, header=("time", "status", "group")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(data_rows)
    return path


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _synthetic(path, n=200, seed=0):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n)
    x2 = rng.integers(0, 2, n)
    z = (rng.random(n) < 1 / (1 + np.exp(-(0.5 * x1 + 0.5 * x2 - 0.25)))).astype(int)
    t = rng.exponential(1 / np.exp(0.5 * x1 + 0.3 * x2 - 0.5 * z))
    c = rng.exponential(2.0, n)
    rows = [(min(a, b), int(a <= b), g, u, v) for a, b, g, u, v in zip(t, c, z, x1, x2)]
    return _write_csv(path, rows, ("time", "status", "group", "X1", "X2"))


# --------------------------------------------------------------------------
# adjust

def test_adjust_two_rows_km(tmp_path):
    src = _write_csv(tmp_path / "d.csv", [(1.0, 1, 0), (2.0, 1, 1)])
    out = tmp_path / "curves.csv"
    assert main(["adjust", "--input", str(src), "--output", str(out), "--methods", "KM"]) == 0
    rows = _read(out)
    assert list(rows[0]) == ["method", "group", "time", "surv", "nm_flag", "oob_flag",
                             "corrected"]
    got = {(r["group"], float(r["time"])): float(r["surv"]) for r in rows}
    assert got == {("0", 0.0): 1.0, ("0", 1.0): 0.0, ("1", 0.0): 1.0, ("1", 2.0): 0.0}
    summary = _read(tmp_path / "curves.summary.csv")
    assert summary[0]["method"] == "KM" and float(summary[0]["horizon"]) == 1.0
    assert float(summary[0]["area_z1_minus_z0"]) == 0.0


def test_adjust_missing_covariate_column(tmp_path, capsys):
    src = _synthetic(tmp_path / "d.csv")
    code = main(["adjust", "--input", str(src), "--output", str(tmp_path / "o.csv"),
                 "--methods", "G_FORMULA", "--outcome-covs", "X1,AGE"])
    assert code == 2
    assert "AGE" in capsys.readouterr().err


def test_adjust_invalid_csv(tmp_path, capsys):
    src = _write_csv(tmp_path / "d.csv", [(1.0, 1, 0), ("x", 1, 1)])
    assert main(["adjust", "--input", str(src), "--output", str(tmp_path / "o.csv")]) == 2
    assert "NonNumeric" in capsys.readouterr().err


def test_adjust_missing_input(tmp_path):
    assert main(["adjust", "--input", str(tmp_path / "nope.csv"),
                 "--output", str(tmp_path / "o.csv"), "--methods", "KM"]) == 2


def test_adjust_all_methods(tmp_path):
    src = _synthetic(tmp_path / "d.csv")
    out = tmp_path / "all.csv"
    code = main(["adjust", "--input", str(src), "--output", str(out), "--methods", "all",
                 "--outcome-covs", "X1,X2", "--treatment-covs", "X1,X2"])
    assert code == 0
    rows = _read(out)
    assert {r["method"] for r in rows} == {m.value for m in MethodId}
    blocks = [rows[0]["method"]]
    for r in rows[1:]:
        if r["method"] != blocks[-1]:
            blocks.append(r["method"])
    assert len(blocks) == 11
    assert len(_read(tmp_path / "all.summary.csv")) == 11


def test_adjust_correct_flag(tmp_path):
    src = _synthetic(tmp_path / "d.csv", n=40, seed=3)
    out = tmp_path / "c.csv"
    assert main(["adjust", "--input", str(src), "--output", str(out), "--methods",
                 "AIPTW_PV,IPTW_PV", "--outcome-covs", "X1,X2", "--treatment-covs", "X1,X2",
                 "--correct"]) == 0
    rows = _read(out)
    assert all(r["corrected"] == "1" for r in rows)
    for m in ("AIPTW_PV", "IPTW_PV"):
        for g in "01":
            s = [float(r["surv"]) for r in rows if r["method"] == m and r["group"] == g]
            assert all(0 <= v <= 1 for v in s) and np.all(np.diff(s) <= 0)


def test_adjust_estimation_error_names_method(tmp_path, capsys):
    # the covariate separates the groups perfectly
    rows = [(i + 1.0, 1, int(i >= 10), float(i)) for i in range(20)]
    src = _write_csv(tmp_path / "d.csv", rows, ("time", "status", "group", "X1"))
    code = main(["adjust", "--input", str(src), "--output", str(tmp_path / "o.csv"),
                 "--methods", "IPTW_KM", "--treatment-covs", "X1"])
    assert code == 3
    assert "IPTW_KM" in capsys.readouterr().err


def test_adjust_needs_covariate_sets(tmp_path):
    src = _synthetic(tmp_path / "d.csv")
    assert main(["adjust", "--input", str(src), "--output", str(tmp_path / "o.csv"),
                 "--methods", "AIPTW", "--outcome-covs", "X1"]) == 2


def test_curves_round_trip(tmp_path):
    from survadj import estimate, read_csv
    src = _synthetic(tmp_path / "d.csv", n=60)
    out = tmp_path / "rt.csv"
    assert main(["adjust", "--input", str(src), "--output", str(out), "--methods",
                 "IPTW_HZ", "--treatment-covs", "X1"]) == 0
    res = estimate("IPTW_HZ", read_csv(src), treatment_covs=["X1"])
    rows = _read(out)
    for g in (0, 1):
        t = np.array([float(r["time"]) for r in rows if r["group"] == str(g)])
        s = np.array([float(r["surv"]) for r in rows if r["group"] == str(g)])
        back = StepCurve(t[1:], s[1:], s[0])
        grid = np.r_[t, t + 1e-9]
        assert np.array_equal(back(grid), res.curve(g)(grid))


# --------------------------------------------------------------------------
# simulate

SIM = ["simulate", "--seed", "5", "--reps", "2", "--n", "100", "--scenarios", "CO_CT",
       "--methods", "KM,IPTW_KM"]


def test_simulate_cardinality_and_schema(tmp_path):
    out = tmp_path / "sim"
    assert main(SIM + ["--output", str(out), "--threads", "1"]) == 0
    metrics = _read(out / "metrics.csv")
    assert len(metrics) == 8
    assert list(metrics[0]) == ["method", "scenario", "n", "rep", "group", "delta_bias",
                                "delta_mse", "nm", "oob", "tau", "failed"]
    agg = _read(out / "aggregate.csv")
    assert len(agg) == 4
    assert list(agg[0]) == ["method", "scenario", "n", "group", "g_bias", "g_bias_mcse",
                            "g_mse", "g_mse_mcse", "nm_pct", "oob_pct"]
    assert (out / "oob_profile.csv").exists()


def test_simulate_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(SIM + ["--output", str(a), "--threads", "1"]) == 0
    assert main(SIM + ["--output", str(b), "--threads", "2"]) == 0
    for name in ("metrics.csv", "aggregate.csv", "oob_profile.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_failure_rows(tmp_path):
    out = tmp_path / "f"
    args = ["simulate", "--seed", "5", "--reps", "2", "--n", "60", "--scenarios", "CO_CT",
            "--methods", "KM,MATCHING", "--caliper", "1e-12", "--threads", "1",
            "--output", str(out)]
    assert main(args) == 0
    rows = _read(out / "metrics.csv")
    assert {r["failed"] for r in rows if r["method"] == "MATCHING"} == {"1"}
    assert {r["failed"] for r in rows if r["method"] == "KM"} == {"0"}


def test_simulate_config_file_and_errors(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[study]\nseed = 2\nreps = 2\nn = 50\nmethods = KM\n"
                   "[dgp]\nsuperpop_size = 2000\n")
    assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "o"),
                 "--threads", "1"]) == 0
    assert len(_read(tmp_path / "o" / "metrics.csv")) == 4
    bad = tmp_path / "bad.ini"
    bad.write_text("[study]\nreps = 1\n")
    assert main(["simulate", "--config", str(bad), "--output", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--reps", "1", "--output", str(tmp_path / "o")]) == 2
    assert main(["simulate", "--methods", "TMLE", "--output", str(tmp_path / "o")]) == 2


def test_simulate_correct_reports_corrected_metrics(tmp_path):
    args = ["simulate", "--seed", "5", "--reps", "3", "--n", "60", "--scenarios", "CO_CT",
            "--methods", "AIPTW_PV", "--threads", "1"]
    assert main(args + ["--output", str(tmp_path / "raw")]) == 0
    assert main(args + ["--correct", "--output", str(tmp_path / "fix")]) == 0
    raw = _read(tmp_path / "raw" / "metrics.csv")
    fix = _read(tmp_path / "fix" / "metrics.csv")
    for r, f in zip(raw, fix):
        assert (r["nm"], r["oob"]) == (f["nm"], f["oob"])
        assert float(f["delta_mse"]) <= float(r["delta_mse"]) + 1e-12


def test_thread_env_variable(tmp_path, monkeypatch):
    from survadj.simulation import worker_count
    monkeypatch.setenv("SURVADJ_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(1) == 1


# --------------------------------------------------------------------------
# truth

def _truth(path):
    rows = _read(path)
    curves = []
    for g in "01":
        t = np.array([float(r["time"]) for r in rows if r["group"] == g])
        s = np.array([float(r["surv"]) for r in rows if r["group"] == g])
        curves.append(StepCurve(t[1:], s[1:], s[0]))
    return curves


def _truth_run(tmp_path, name, ini=""):
    cfg = tmp_path / f"{name}.ini"
    cfg.write_text("[dgp]\nsuperpop_size = 5000\n" + ini)
    out = tmp_path / f"{name}.csv"
    assert main(["truth", "--config", str(cfg), "--seed", "4", "--output", str(out)]) == 0
    return _truth(out)


def test_truth_default_curves_are_proper(tmp_path):
    for c in _truth_run(tmp_path, "d"):
        assert c.initial == 1.0 and c.is_monotone(0.0) and c.is_bounded(0.0)


def test_truth_without_treatment_effect_is_identical(tmp_path):
    ini = "[beta_outcome]\nX1 = 0.5878\nX2 = 0.5878\nX4 = 0.5878\nX5 = 0.5878\nZ = 0\n"
    c0, c1 = _truth_run(tmp_path, "z", ini)
    assert np.array_equal(c0.times, c1.times) and np.array_equal(c0.values, c1.values)


def test_truth_doubling_lambda_lowers_survival(tmp_path):
    base = _truth_run(tmp_path, "a", "event_weibull = 2, 1.8\n")
    double = _truth_run(tmp_path, "b", "event_weibull = 4, 1.8\n")
    for z in (0, 1):
        hi = max(base[z].times[-1], double[z].times[-1])
        assert integrate_curve(double[z], 0, hi) < integrate_curve(base[z], 0, hi)


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
