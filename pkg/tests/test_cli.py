"""Command-line pipeline: commands, exit codes, reports and reproducibility."""

import json
import numpy as np
import pytest

from multiclaim.cli import main

SCENARIO = {
    "n_policies": 60,
    "n_years": 3,
    "lambda0": 2.0,
    "xi0": float(np.exp(8)),
    "nu_sev": 0.7,
    "theta": [0.3, 0.3, 0.5, 0.5],
    "seed": 17,
}
CONFIG = {
    "family": "gaussian",
    "quad_nodes": 16,
    "seed": 99,
    "test_years": [3],
    "prediction_samples": 200,
    "gtol_rel": 1e-5,
}


@pytest.fixture()
def workspace(tmp_path):
    scenario = tmp_path / "scenario.json"
    scenario.write_text(json.dumps(SCENARIO), encoding="utf-8")
    config = tmp_path / "config.json"
    config.write_text(json.dumps(CONFIG), encoding="utf-8")
    data = tmp_path / "data"
    assert main(["simulate", "--scenario", str(scenario), "--out-dir", str(data)]) == 0
    return tmp_path


def files(args, ws):
    return [str(ws / f) for f in args]


def test_simulate_outputs_exist_and_rerun_identical(workspace, tmp_path, capsys):
    again = tmp_path / "again"
    assert (
        main(["simulate", "--scenario", str(workspace / "scenario.json"), "--out-dir", str(again)])
        == 0
    )
    for name in ("policy_year.csv", "claims.csv"):
        assert (workspace / "data" / name).read_bytes() == (again / name).read_bytes()


def test_pdcheck_scenario_one(capsys):
    assert main(["pdcheck", "--theta", "0.3,0.3,0.5,0.5", "--n", "2,3"]) == 0
    out = capsys.readouterr().out
    assert "admissible=true" in out
    assert "rho: 0.34 0.34 0.09 0.09 0.09" in out
    assert "PD=true" in out


def test_pdcheck_rejects_non_pd_rho(capsys):
    assert main(["pdcheck", "--rho", "0.9,0.1,0,0,0", "--n", "2"]) == 0
    assert "PD=false" in capsys.readouterr().out


def test_pdcheck_requires_parameters(capsys):
    assert main(["pdcheck", "--n", "2"]) == 1


def test_usage_error_exit_code_and_message(capsys):
    assert main(["fit", "--policy-year", "x.csv"]) == 1
    err = capsys.readouterr().err
    assert "--claims" in err or "--config" in err


def test_density_independence_matches_product(tmp_path, capsys):
    history = tmp_path / "history.json"
    history.write_text(
        json.dumps({"years": [{"count": 1, "severities": [1500.0]}, {"count": 0}]}),
        encoding="utf-8",
    )
    params = tmp_path / "params.json"
    params.write_text(
        json.dumps({"theta": [0, 0, 0, 0], "lambda": 2.0, "xi": float(np.exp(8)), "nu_sev": 0.7}),
        encoding="utf-8",
    )
    assert main(["density", "--history", str(history), "--params", str(params)]) == 0
    out = capsys.readouterr().out
    from multiclaim.marginals import freq_logpmf, sev_logpdf

    expected = float(
        freq_logpmf(1, 2.0) + freq_logpmf(0, 2.0) + sev_logpdf(1500.0, np.exp(8), 0.7)
    )
    printed = float(out.splitlines()[0].split()[1])
    assert printed == pytest.approx(expected, abs=1e-10)


def test_fit_rho_predict_validate_pipeline(workspace, capsys):
    ws = workspace
    data = ws / "data"
    args_common = [
        "--policy-year", str(data / "policy_year.csv"),
        "--claims", str(data / "claims.csv"),
        "--config", str(ws / "config.json"),
    ]
    assert main(["fit", *args_common, "--out-dir", str(ws / "fit")]) == 0
    out = capsys.readouterr().out
    assert "Frequency part" in out and "Copula part" in out
    fit_json = ws / "fit" / "fit_result.json"
    assert fit_json.exists()
    assert (ws / "fit" / "fit_report.csv").exists()

    assert main(["rho", "--fit", str(fit_json), "--out-dir", str(ws / "fit")]) == 0
    out = capsys.readouterr().out
    assert "rho5" in out
    assert (ws / "fit" / "rho_report.csv").exists()

    assert main(
        ["predict", "--fit", str(fit_json), *args_common, "--out-dir", str(ws / "pred")]
    ) == 0
    pred_csv = ws / "pred" / "predictions.csv"
    assert pred_csv.exists()
    assert (ws / "pred" / "predicted_vs_actual.png").exists()
    header = pred_csv.read_text(encoding="utf-8").splitlines()[0]
    assert header == "policy_id,actual,predicted"

    assert main(
        ["validate", "--predictions", str(pred_csv), "--out-dir", str(ws / "val")]
    ) == 0
    out = capsys.readouterr().out
    assert "RMSE" in out and "Gini" in out
    assert (ws / "val" / "metrics.csv").exists()
    assert (ws / "val" / "lorenz.png").exists()


def test_nested_validate_pipeline_table_layout(workspace, capsys):
    ws = workspace
    data = ws / "data"
    assert main(
        [
            "validate",
            "--policy-year", str(data / "policy_year.csv"),
            "--claims", str(data / "claims.csv"),
            "--config", str(ws / "config.json"),
            "--out-dir", str(ws / "nested"),
            "--variants", "full", "nested1", "nested2", "nested3",
        ]
    ) == 0
    out = capsys.readouterr().out
    for label in ("Full", "Nested 1", "Nested 2", "Nested 3"):
        assert label in out
    for metric in ("RMSE", "MSE", "MAE", "Gini"):
        assert metric in out
    metrics = (ws / "nested" / "metrics.csv").read_text(encoding="utf-8").splitlines()
    assert metrics[0] == "metric,full,nested1,nested2,nested3"
    for variant in ("full", "nested1", "nested2", "nested3"):
        assert (ws / "nested" / f"predictions_{variant}.csv").exists()


def test_summarize_totals_match_row_counts(workspace, capsys):
    ws = workspace
    data = ws / "data"
    assert main(
        [
            "summarize",
            "--policy-year", str(data / "policy_year.csv"),
            "--claims", str(data / "claims.csv"),
            "--test-years", "3",
            "--out-dir", str(ws / "sum"),
        ]
    ) == 0
    out = capsys.readouterr().out
    assert "Number of observations by frequency and year" in out
    n_py_rows = len((data / "policy_year.csv").read_text().splitlines()) - 1
    n_claim_rows = len((data / "claims.csv").read_text().splitlines()) - 1
    import csv

    with open(ws / "sum" / "counts_by_year.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    total_row = rows[-1]
    grand_total = int(total_row["Count"]) + int(total_row["3"])
    assert grand_total == n_py_rows
    # weighting each frequency row by its count recovers the claims file size
    freq_count_total = sum(
        int(r["frequency"]) * (int(r["Count"]) + int(r["3"])) for r in rows[:-1]
    )
    assert freq_count_total == n_claim_rows
    assert (ws / "sum" / "claim_frequency.png").exists()


def test_validation_error_exit_code(workspace, tmp_path):
    ws = workspace
    bad_claims = tmp_path / "bad.csv"
    bad_claims.write_text(
        "policy_id,year,claim_index,amount\nZZZ,1,1,100\n", encoding="utf-8"
    )
    code = main(
        [
            "fit",
            "--policy-year", str(ws / "data" / "policy_year.csv"),
            "--claims", str(bad_claims),
            "--config", str(ws / "config.json"),
            "--out-dir", str(tmp_path / "out"),
        ]
    )
    assert code == 1


def test_fit_reruns_byte_identical(workspace, tmp_path):
    ws = workspace
    data = ws / "data"
    args = [
        "fit",
        "--policy-year", str(data / "policy_year.csv"),
        "--claims", str(data / "claims.csv"),
        "--config", str(ws / "config.json"),
    ]
    assert main([*args, "--out-dir", str(tmp_path / "a")]) == 0
    assert main([*args, "--out-dir", str(tmp_path / "b")]) == 0
    for name in ("fit_result.json", "fit_report.txt", "fit_report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
