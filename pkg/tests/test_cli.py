import csv
import io
import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from entrostat import cli


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def parse_csv(text):
    lines = text.splitlines()
    assert lines[0].startswith("# ")
    meta = json.loads(lines[0][2:])
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    return meta, rows[0], rows[1:]


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("ENTROSTAT_WORKERS", raising=False)


# ---------------------------------------------------------------- phase diagram

def test_phase_diagram_stable_energy_decreases(capsys):
    code, out, _ = run(["phase-diagram", "--beta-min", "0", "--beta-max", "10", "--points", "41"], capsys)
    assert code == 0
    meta, cols, rows = parse_csv(out)
    assert cols == ["beta", "branch", "m", "delta", "mu", "u", "s", "beta_f", "alpha", "branch_id"]
    u = np.array([float(r[5]) for r in rows])
    assert u[0] == pytest.approx(2.0) and np.all(np.diff(u) < 0) and u[-1] > 1.0
    assert meta["tool"] == "entrostat" and meta["seed"] == 0 and meta["config"]["points"] == 41


def test_phase_diagram_metastable_branch_ids(capsys):
    code, out, _ = run(["phase-diagram", "--beta-min", "-5", "--beta-max", "-0.001", "--points", "500",
                        "--branch", "metastable"], capsys)
    assert code == 0
    _, _, rows = parse_csv(out)
    ids = [r[9] for r in rows]
    changes = [(float(rows[k][0]), ids[k], ids[k + 1]) for k in range(len(ids) - 1) if ids[k] != ids[k + 1]]
    assert [c[1:] for c in changes] == [("Arcsine", "AsymArcsineLower"), ("AsymArcsineLower", "AsymArcsineUpper"),
                                        ("AsymArcsineUpper", "MetaWishart")]
    for (beta, _, _), edge in zip(changes, (-2.0, -1.5 + math.sqrt(2), -2 / 27)):
        assert abs(beta - edge) < 0.011


def test_phase_diagram_both_at_minus_one(capsys):
    code, out, _ = run(["phase-diagram", "--beta-min", "-1", "--beta-max", "-0.5", "--points", "2",
                        "--branch", "both"], capsys)
    _, _, rows = parse_csv(out)
    at = [r for r in rows if float(r[0]) == -1.0]
    assert len(at) == 2 and {r[1] for r in at} == {"stable", "metastable"}
    assert (at[0][5], at[0][6]) != (at[1][5], at[1][6])


@pytest.mark.parametrize("argv", [
    ["phase-diagram", "--beta-min", "1", "--beta-max", "0"],
    ["phase-diagram", "--beta-min", "0"],
    ["phase-diagram", "--beta-min", "0", "--beta-max", "1", "--branch", "nope"],
    ["phase-diagram", "--beta-min", "0", "--beta-max", "1", "--unknown", "3"],
])
def test_phase_diagram_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and "entrostat" in err


# ---------------------------------------------------------------- density

def test_density_semicircle(capsys):
    code, out, _ = run(["density", "--beta", "2", "--grid-points", "101"], capsys)
    meta, cols, rows = parse_csv(out)
    lam = np.array([float(r[0]) for r in rows])
    rho = np.array([float(r[1]) for r in rows])
    assert cols == ["lambda", "rho"] and lam[0] == pytest.approx(0) and lam[-1] == pytest.approx(2)
    assert np.sum(0.5 * (rho[1:] + rho[:-1]) * np.diff(lam)) == pytest.approx(1.0, abs=3e-3)  # trapezoid error at sqrt edges
    assert meta["branch_id"] == "Semicircle" and meta["divergent_endpoints"] == []


def test_density_wishart_flags_divergent_edge(capsys):
    code, out, _ = run(["density", "--beta", "0", "--grid-points", "50"], capsys)
    meta, _, rows = parse_csv(out)
    assert code == 0 and meta["support"] == [0.0, 4.0]
    assert meta["divergent_endpoints"] == ["lower"]
    assert rows[0][1] == rows[1][1]
    assert all(math.isfinite(float(r[1])) for r in rows)


def test_density_metastable_arcsine_symmetric(capsys):
    code, out, _ = run(["density", "--beta", "-5", "--branch", "metastable", "--grid-points", "101"], capsys)
    meta, _, rows = parse_csv(out)
    rho = np.array([float(r[1]) for r in rows])
    assert meta["branch_id"] == "Arcsine"
    assert np.allclose(rho, rho[::-1], rtol=1e-9)
    assert sorted(meta["divergent_endpoints"]) == ["lower", "upper"]


def test_density_separable_reports_detached_eigenvalue(capsys):
    code, out, _ = run(["density", "--beta", "-10"], capsys)
    meta, _, _ = parse_csv(out)
    assert code == 0 and meta["detached_eigenvalue"] == pytest.approx(0.5 + 0.5 * math.sqrt(0.8))


def test_density_bad_combination(capsys):
    assert run(["density", "--beta", "1", "--branch", "metastable"], capsys)[0] == 2
    assert run(["density", "--beta", "1", "--grid-points", "1"], capsys)[0] == 2


# ---------------------------------------------------------------- moments

def test_moments_pure_exact_json(capsys):
    code, out, _ = run(["moments", "--mode", "pure-exact", "--n", "4", "--m", "4", "--format", "json"], capsys)
    doc = json.loads(out)
    assert code == 0 and doc["columns"] == ["quantity", "value"]
    assert dict(doc["rows"])["K1"] == pytest.approx(8 / 17, abs=1e-15)
    assert doc["meta"]["formulas"]


def test_moments_mixed_totally_mixed(capsys):
    code, out, _ = run(["moments", "--mode", "mixed-exact", "--n", "3", "--m", "3", "--x", repr(1 / 9),
                        "--format", "json"], capsys)
    vals = dict(json.loads(out)["rows"])
    assert vals["M1"] == pytest.approx(1 / 3, abs=1e-15)
    assert vals["K2"] == pytest.approx(0.0, abs=1e-14)


def test_moments_high_temp_independent_of_beta(capsys):
    outs = []
    for beta in ("-0.5", "0.3"):
        code, out, _ = run(["moments", "--mode", "high-temp", "--n", "3", "--m", "3", "--x", repr(1 / 9),
                            "--beta", beta, "--format", "json"], capsys)
        assert code == 0
        outs.append(dict(json.loads(out)["rows"])["first_moment"])
    assert outs[0] == pytest.approx(1 / 3, abs=1e-14) and outs[0] == pytest.approx(outs[1], abs=1e-14)


def test_moments_other_modes(capsys):
    _, out, _ = run(["moments", "--mode", "pure-asymptotic", "--n", "10", "--order", "3", "--format", "json"], capsys)
    assert dict(json.loads(out)["rows"])["K3"] == pytest.approx(16 / 10 ** 7)
    _, out, _ = run(["moments", "--mode", "gaussian", "--n", "5", "--m", "5", "--x", "1", "--format", "json"], capsys)
    assert dict(json.loads(out)["rows"])["M1"] == pytest.approx(0.4)


@pytest.mark.parametrize("argv", [
    ["moments", "--mode", "pure-exact", "--n", "4"],
    ["moments", "--mode", "high-temp", "--n", "2", "--m", "2", "--x", "0.5", "--beta", "0.1"],
    ["moments", "--mode", "mixed-exact", "--n", "2", "--m", "2", "--x", "0.01"],
    ["moments"],
])
def test_moments_missing_parameters(argv, capsys):
    assert run(argv, capsys)[0] == 2


# ---------------------------------------------------------------- sample

def test_sample_haar_sidecar(tmp_path, capsys):
    out = tmp_path / "h.csv"
    code, _, _ = run(["sample", "--kind", "haar-spectrum", "--n", "4", "--m", "4", "--samples", "100000",
                      "--seed", "5", "--out", str(out)], capsys)
    assert code == 0
    summary = json.loads((tmp_path / "h.csv.summary.json").read_text())
    assert summary["within_3sigma"] and summary["target_mean_purity"] == pytest.approx(8 / 17)
    meta, cols, rows = parse_csv(out.read_text())
    assert cols == ["lambda_1", "lambda_2", "lambda_3", "lambda_4"] and len(rows) == 100_000
    assert meta["summary_path"].endswith(".summary.json")


def test_sample_simplex_summary_on_stdout(capsys):
    code, out, _ = run(["sample", "--kind", "simplex", "--l", "8", "--samples", "100000"], capsys)
    meta, _, _ = parse_csv(out)
    assert abs(meta["summary"]["coordinate_mean"] - 0.125) <= 3 * meta["summary"]["stderr"]


def test_sample_mcmc_ks(capsys):
    code, out, _ = run(["sample", "--kind", "mcmc", "--n", "16", "--beta-scaled", "0", "--steps", "512000",
                        "--seed", "3"], capsys)
    meta, _, rows = parse_csv(out)
    assert code == 0 and meta["summary"]["ks_reference"] == "Wishart" and meta["summary"]["ks_pass"]


def test_sample_purified(capsys):
    code, out, _ = run(["sample", "--kind", "purified", "--l", "4", "--samples", "3000", "--bins", "8"], capsys)
    meta, cols, rows = parse_csv(out)
    assert code == 0 and cols == ["x", "pi_A", "tr3", "tr4"] and len(rows) == 3000
    assert sum(meta["summary"]["binned"]["counts"]) == 3000


def test_sample_rows_independent_of_workers(capsys):
    outs = []
    for w in ("1", "3"):
        _, out, _ = run(["sample", "--kind", "haar-spectrum", "--n", "2", "--m", "3", "--samples", "25000",
                         "--workers", w, "--seed", "11"], capsys)
        outs.append(out.splitlines()[1:])
    assert outs[0] == outs[1]


def test_sample_bad_params(capsys):
    assert run(["sample", "--kind", "simplex"], capsys)[0] == 2
    assert run(["sample", "--kind", "mcmc", "--n", "1", "--steps", "10"], capsys)[0] == 2
    assert run(["sample", "--kind", "simplex", "--l", "3", "--samples", "0"], capsys)[0] == 2


# ---------------------------------------------------------------- minimize

def test_minimize_single_basin_positive_beta(capsys):
    code, out, _ = run(["minimize", "--n", "8", "--beta", "1"], capsys)
    meta, cols, rows = parse_csv(out)
    assert code == 0 and meta["basins"] == 1 and rows[0][1] == "typical" and rows[0][4] == "1"


def test_minimize_two_basins(capsys):
    code, out, _ = run(["minimize", "--n", "30", "--beta", "-2.2"], capsys)
    meta, _, rows = parse_csv(out)
    assert code == 0 and {r[1] for r in rows} == {"typical", "separable"}


def test_minimize_sweep_crossing(capsys):
    code, out, _ = run(["minimize", "--n", "30", "--beta-sweep", "-3:-1:0.25", "--workers", "4"], capsys)
    meta, cols, rows = parse_csv(out)
    assert code == 0 and cols[4] == "lambda_max_analytic"
    assert meta["crossing"] == pytest.approx(-1.935, abs=0.05)


def test_minimize_profile(capsys):
    code, out, _ = run(["minimize", "--n", "30", "--beta", "-1.935", "--mu-grid", "0.1:0.9:0.01"], capsys)
    meta, cols, rows = parse_csv(out)
    assert code == 0 and cols == ["mu", "beta_f", "converged", "reliable"]
    assert len(meta["local_minima_mu"]) == 2


def test_minimize_convergence_failure_exit3(capsys):
    code, out, err = run(["minimize", "--n", "12", "--beta", "-2.3", "--max-iter", "2"], capsys)
    assert code == 3 and "did not converge" in err
    meta, _, rows = parse_csv(out)
    assert rows and meta["all_converged"] is False


@pytest.mark.parametrize("argv", [
    ["minimize", "--n", "8"],
    ["minimize", "--n", "8", "--beta", "1", "--beta-sweep", "-1:0:0.5"],
    ["minimize", "--n", "8", "--beta-sweep", "0:-1:0.5"],
    ["minimize", "--n", "1", "--beta", "1"],
    ["minimize", "--n", "8", "--beta-sweep", "-2:-1:0.5", "--mu-grid", "0.2:0.5:0.1"],
])
def test_minimize_usage_errors(argv, capsys):
    assert run(argv, capsys)[0] == 2


# ---------------------------------------------------------------- verify

def test_verify_quick_analytic(capsys):
    code, out, err = run(["verify", "--suite", "analytic", "--format", "json"], capsys)
    doc = json.loads(out)
    keys = [r[0] for r in doc["rows"]]
    assert keys == ["1", "2", "3", "4", "beta_g-series"]
    assert "PASS criterion 1" in err
    assert code == (0 if doc["meta"]["all_passed"] else 1)


def test_verify_failure_exit_code(capsys, monkeypatch):
    from entrostat import acceptance
    bad = acceptance.Check("x", "always fails", False, {}, {})
    monkeypatch.setattr(acceptance, "run_suite", lambda *a, **k: [bad])
    code, _, err = run(["verify"], capsys)
    assert code == 1 and "FAIL criterion x" in err


# ---------------------------------------------------------------- config

def test_config_precedence(tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\npoints = 3\nbeta-min = 0\nbeta_max = 1\nworkers = 2\n\n")
    monkeypatch.setenv("ENTROSTAT_WORKERS", "7")
    _, out, _ = run(["phase-diagram", "--config", str(cfg)], capsys)
    meta, _, rows = parse_csv(out)
    assert len(rows) == 3 and meta["config"]["workers"] == 2
    _, out, _ = run(["phase-diagram", "--config", str(cfg), "--points", "5", "--workers", "4"], capsys)
    meta, _, rows = parse_csv(out)
    assert len(rows) == 5 and meta["config"]["workers"] == 4


def test_env_workers_default(capsys, monkeypatch):
    monkeypatch.setenv("ENTROSTAT_WORKERS", "5")
    _, out, _ = run(["phase-diagram", "--beta-min", "0", "--beta-max", "1", "--points", "2"], capsys)
    assert parse_csv(out)[0]["config"]["workers"] == 5
    monkeypatch.setenv("ENTROSTAT_WORKERS", "many")
    assert run(["phase-diagram", "--beta-min", "0", "--beta-max", "1"], capsys)[0] == 2


@pytest.mark.parametrize("text", ["bogus = 1\n", "points = three\n", "just a line\n", "branch = sideways\n"])
def test_config_rejections(tmp_path, capsys, text):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("beta_min = 0\nbeta_max = 1\n" + text)
    assert run(["phase-diagram", "--config", str(cfg)], capsys)[0] == 2


def test_missing_config_file(capsys, tmp_path):
    assert run(["phase-diagram", "--config", str(tmp_path / "none.cfg")], capsys)[0] == 2


def test_header_reproduces_rows(tmp_path, capsys):
    first = tmp_path / "a.csv"
    run(["sample", "--kind", "simplex", "--l", "5", "--samples", "200", "--seed", "9", "--out", str(first)], capsys)
    meta = json.loads(first.read_text().splitlines()[0][2:])
    cfg = tmp_path / "replay.cfg"
    keep = {k: v for k, v in meta["config"].items() if v is not None and k not in ("out", "sidecar")}
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in keep.items()))
    second = tmp_path / "b.csv"
    run(["sample", "--config", str(cfg), "--out", str(second)], capsys)
    assert first.read_text().splitlines()[1:] == second.read_text().splitlines()[1:]


def test_csv_float_format_round_trips(capsys):
    _, out, _ = run(["moments", "--mode", "pure-exact", "--n", "2", "--m", "3"], capsys)
    _, _, rows = parse_csv(out)
    assert float(rows[0][1]) == 5 / 7 and rows[0][1] == repr(5 / 7)


def test_module_entry_point_and_numpy_backend():
    env = dict(os.environ, ENTROSTAT_DISABLE_NUMBA="1")
    argv = [sys.executable, "-m", "entrostat", "sample", "--kind", "mcmc", "--n", "4", "--steps", "3200",
            "--burn-in", "2000", "--seed", "2"]
    slow = subprocess.run(argv, env=env, capture_output=True, text=True, check=True)
    env["ENTROSTAT_DISABLE_NUMBA"] = "0"
    fast = subprocess.run(argv, env=env, capture_output=True, text=True, check=True)
    a = np.array([[float(v) for v in line.split(",")] for line in slow.stdout.splitlines()[2:]])
    b = np.array([[float(v) for v in line.split(",")] for line in fast.stdout.splitlines()[2:]])
    assert a.shape == b.shape and np.allclose(a, b, rtol=0, atol=1e-12)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--version"])
    assert exc.value.code == 0
    assert "entrostat" in capsys.readouterr().out
