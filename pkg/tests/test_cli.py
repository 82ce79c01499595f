"""Command-line surface: exit codes, artifact layout, JSON schemas,
flag precedence, and the figure files the simulate path renders."""

import json
import os

import numpy as np
import pytest

from matvartest.cli import main
from matvartest.covmodel import (
    child_seed,
    gen_autocorr,
    gen_identity,
    sample_matnorm,
    write_data_csv,
)
from matvartest.figures import render_report
from matvartest.simharness import (
    ExperimentConfig,
    load_report,
    run_mtc,
    run_power,
    run_quadfunc_error,
)


def _write_data(tmp_path, name="x.csv", p=20, n=12, seed=7, psi_rho=None):
    psi = gen_identity(n) if psi_rho is None else gen_autocorr(n, psi_rho)
    x = sample_matnorm(0.0, gen_identity(p), psi, child_seed(500, seed))
    path = tmp_path / name
    write_data_csv(str(path), x)
    return str(path)


def _stdout_json(capsys):
    out = capsys.readouterr().out
    return json.loads(out)


# -------------------------------------------------------------- exit codes


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "ind-test" in capsys.readouterr().out


def test_missing_subcommand_is_usage(capsys):
    assert main([]) == 2
    capsys.readouterr()


def test_unknown_flag_is_usage(tmp_path, capsys):
    path = _write_data(tmp_path)
    assert main(["ind-test", "--input", path, "--bogus"]) == 2
    capsys.readouterr()


def test_bad_alpha_is_usage(tmp_path, capsys):
    path = _write_data(tmp_path)
    assert main(["ind-test", "--input", path, "--alpha", "0"]) == 2
    err = capsys.readouterr().err
    assert err.startswith("matvartest: usage error:")
    assert err.count("\n") == 1


def test_missing_input_is_data_error(tmp_path, capsys):
    assert main(["ind-test", "--input", str(tmp_path / "nope.csv")]) == 3
    err = capsys.readouterr().err
    assert err.startswith("matvartest: data error:")


def test_malformed_csv_is_data_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,2.0,3.0\n4.0,5.0\n")
    assert main(["ind-test", "--input", str(bad)]) == 3
    capsys.readouterr()


def test_infeasible_level_is_numerical_error(tmp_path, capsys):
    # n=12 samples put the feasibility floor at 1/12; 0.01 sits below it
    path = _write_data(tmp_path)
    code = main(["corr-mtc", "--input", path, "--method", "sandwich",
                 "--lam", "0.01",
                 "--output-prefix", str(tmp_path / "out")])
    assert code == 4
    err = capsys.readouterr().err
    assert err.startswith("matvartest: numerical error:")
    assert err.count("\n") == 1


# ---------------------------------------------------------------- ind-test


def test_ind_test_writes_json(tmp_path, capsys):
    path = _write_data(tmp_path)
    out = tmp_path / "res.json"
    assert main(["ind-test", "--input", path, "--output", str(out)]) == 0
    capsys.readouterr()
    payload = json.loads(out.read_text())
    assert payload["schema"] == "v1"
    for key in ("statistic", "centered", "critical_value", "alpha", "reject",
                "ap_hat", "bn_hat", "argmax_i", "argmax_j", "mode"):
        assert key in payload
    assert payload["mode"] == "limiting"
    assert isinstance(payload["reject"], bool)


def test_ind_test_stdout_default(tmp_path, capsys):
    path = _write_data(tmp_path)
    assert main(["ind-test", "--input", path]) == 0
    payload = _stdout_json(capsys)
    assert payload["schema"] == "v1"


def test_ind_test_monte_carlo_mode(tmp_path, capsys):
    path = _write_data(tmp_path, p=15, n=10)
    assert main(["ind-test", "--input", path, "--mode", "monte-carlo",
                 "--mc-reps", "40", "--seed", "3"]) == 0
    payload = _stdout_json(capsys)
    assert payload["mode"] == "monte-carlo"


def test_ind_test_null_acceptance_rate(tmp_path, capsys):
    # null data should be rejected only at roughly the nominal 5% level
    rejects = 0
    for r in range(30):
        path = _write_data(tmp_path, name=f"null{r}.csv", p=80, n=60, seed=r)
        out = tmp_path / f"null{r}.json"
        assert main(["ind-test", "--input", path, "--output", str(out)]) == 0
        rejects += bool(json.loads(out.read_text())["reject"])
    capsys.readouterr()
    assert rejects <= 5


# ------------------------------------------------------------- mc-critical


def test_mc_critical_deterministic(capsys):
    args = ["mc-critical", "--n", "15", "--p", "30", "--M", "50",
            "--alpha", "0.05", "--seed", "7"]
    assert main(args) == 0
    first = _stdout_json(capsys)
    assert main(args) == 0
    second = _stdout_json(capsys)
    assert first["critical_value"] == second["critical_value"]
    assert first["schema"] == "v1"
    assert (first["n"], first["p"], first["reps"]) == (15, 30, 50)


# ---------------------------------------------------------------- estimate


def test_estimate_output(tmp_path, capsys):
    path = _write_data(tmp_path)
    assert main(["estimate", "--input", path]) == 0
    payload = _stdout_json(capsys)
    assert payload["schema"] == "v1"
    for key in ("bn_hat", "sigma_fro2_hat", "ap_hat", "delta",
                "threshold_level", "kept_offdiag"):
        assert key in payload
    assert payload["delta"] == 1.42
    assert payload["ap_hat"] >= 1.0


# ---------------------------------------------------------------- corr-mtc


def test_corr_mtc_naive_artifacts(tmp_path, capsys):
    path = _write_data(tmp_path, p=6, n=10)
    prefix = str(tmp_path / "out")
    assert main(["corr-mtc", "--input", path, "--method", "naive",
                 "--output-prefix", prefix]) == 0
    summary = _stdout_json(capsys)
    assert summary["schema"] == "v1"
    assert summary["method"] == "naive"
    assert summary["lambda"] is None
    assert summary["csv"] == prefix + ".csv"

    lines = open(prefix + ".csv").read().strip().splitlines()
    assert lines[0] == "i,j,statistic,rejected"
    assert len(lines) == 1 + 15
    flagged = sum(ln.endswith(",1") for ln in lines[1:])
    assert flagged == summary["rejections"]

    side = json.loads(open(prefix + ".json").read())
    assert side["schema"] == "v1"
    assert side["t_hat"] == summary["t_hat"]


def test_corr_mtc_fixed_level(tmp_path, capsys):
    path = _write_data(tmp_path)
    prefix = str(tmp_path / "fx")
    assert main(["corr-mtc", "--input", path, "--method", "sandwich",
                 "--lam", "0.5", "--output-prefix", prefix]) == 0
    summary = _stdout_json(capsys)
    assert summary["lambda"] == 0.5
    assert summary["method"] == "sandwich"


def test_corr_mtc_tuned_level(tmp_path, capsys):
    path = _write_data(tmp_path)
    prefix = str(tmp_path / "tu")
    assert main(["corr-mtc", "--input", path, "--method", "sandwich",
                 "--output-prefix", prefix]) == 0
    summary = _stdout_json(capsys)
    assert summary["lambda"] is not None
    assert summary["lambda"] > 0.0


def test_corr_mtc_corrected(tmp_path, capsys):
    path = _write_data(tmp_path, psi_rho=0.4)
    prefix = str(tmp_path / "co")
    assert main(["corr-mtc", "--input", path, "--method", "corrected",
                 "--output-prefix", prefix]) == 0
    summary = _stdout_json(capsys)
    assert summary["method"] == "corrected"
    assert summary["lambda"] is None


# ---------------------------------------------------------------- simulate


def _size_config(tmp_path, **over):
    cfg = {
        "kind": "size", "n": 20, "p": 30,
        "sigma": {"name": "autocorr", "rho": 0.5},
        "psi": {"name": "identity"},
        "reps": 2, "seed": 5,
    }
    cfg.update(over)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_simulate_size_artifacts(tmp_path, capsys):
    cfg = _size_config(tmp_path)
    outdir = str(tmp_path / "sim")
    assert main(["simulate", "--config", cfg, "--outdir", outdir]) == 0
    summary = _stdout_json(capsys)
    assert summary["schema"] == "v1"
    expected = [os.path.join(outdir, f) for f in
                ("report.json", "records.csv", "report_size.png")]
    assert summary["artifacts"] == expected
    for f in expected:
        assert os.path.getsize(f) > 0
    back = load_report(expected[0], expected[1])
    assert back.aggregates == summary["aggregates"]


def test_simulate_no_figures(tmp_path, capsys):
    cfg = _size_config(tmp_path)
    outdir = str(tmp_path / "plain")
    assert main(["simulate", "--config", cfg, "--outdir", outdir,
                 "--no-figures"]) == 0
    summary = _stdout_json(capsys)
    assert len(summary["artifacts"]) == 2
    assert not any(f.endswith(".png") for f in os.listdir(outdir))


def test_simulate_flag_precedence(tmp_path, capsys):
    cfg = _size_config(tmp_path, reps=2, seed=5)
    outdir = str(tmp_path / "over")
    assert main(["simulate", "--config", cfg, "--outdir", outdir,
                 "--reps", "3", "--seed", "9", "--alpha", "0.1",
                 "--no-figures"]) == 0
    capsys.readouterr()
    back = load_report(os.path.join(outdir, "report.json"),
                       os.path.join(outdir, "records.csv"))
    assert back.config.reps == 3
    assert back.config.seed == 9
    assert back.config.alpha == 0.1
    assert len(back.records) == 3


def test_simulate_methods_flag(tmp_path, capsys):
    cfg = {
        "kind": "mtc", "n": 15, "p": 25,
        "sigma": {"name": "banded"},
        "psi": {"name": "autocorr", "rho": 0.3},
        "reps": 2, "seed": 6, "lambda_grid": [0.4, 0.6],
    }
    path = tmp_path / "mtc.json"
    path.write_text(json.dumps(cfg))
    outdir = str(tmp_path / "mtc")
    assert main(["simulate", "--config", str(path), "--outdir", outdir,
                 "--methods", "naive", "--no-figures"]) == 0
    summary = _stdout_json(capsys)
    methods = [m["method"] for m in summary["aggregates"]["methods"]]
    assert methods == ["naive"]


def test_simulate_config_errors(tmp_path, capsys):
    broken = tmp_path / "broken.json"
    broken.write_text("{oops")
    assert main(["simulate", "--config", str(broken)]) == 3

    listy = tmp_path / "list.json"
    listy.write_text("[1, 2]")
    assert main(["simulate", "--config", str(listy)]) == 3

    unknown = _size_config(tmp_path, extra_knob=1)
    assert main(["simulate", "--config", unknown]) == 3
    capsys.readouterr()


# ----------------------------------------------------------------- figures


def test_render_power_sweep_figure(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "kind": "power", "n": 20, "p": 50,
        "sigma": {"name": "identity"},
        "psi": {"name": "sparse-pair", "kappa": [0, 4]},
        "reps": 2, "seed": 31,
    })
    paths = render_report(run_power(cfg), str(tmp_path))
    assert paths == [str(tmp_path / "report_power.png")]
    assert os.path.getsize(paths[0]) > 0


def test_render_mtc_figure(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "kind": "mtc", "n": 15, "p": 25,
        "sigma": {"name": "banded"},
        "psi": {"name": "autocorr", "rho": 0.3},
        "reps": 2, "seed": 21, "methods": ["naive", "corrected"],
    })
    paths = render_report(run_mtc(cfg), str(tmp_path))
    assert paths == [str(tmp_path / "report_mtc.png")]
    assert os.path.getsize(paths[0]) > 0


def test_render_error_figure(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "kind": "quadfunc-error", "n": 25, "p": 40,
        "sigma": {"name": "autocorr", "rho": 0.5},
        "psi": {"name": "autocorr", "rho": 0.4},
        "reps": 2, "seed": 41,
    })
    paths = render_report(run_quadfunc_error(cfg), str(tmp_path), stem="quad")
    assert paths == [str(tmp_path / "quad_error.png")]
    assert os.path.getsize(paths[0]) > 0
