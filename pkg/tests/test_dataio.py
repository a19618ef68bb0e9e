"""CSV schemas, config validation and portfolio round-trips."""

import numpy as np
import pytest

from multiclaim.dataio import (
    RunConfig,
    load_model_params_json,
    load_portfolio,
    load_run_config,
    load_scenario_config,
    write_csv,
    write_portfolio,
)
from multiclaim.dependence import ThetaParams
from multiclaim.errors import ValidationError
from multiclaim.simulate import ScenarioConfig, simulate_portfolio


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_portfolio_round_trip(tmp_path):
    cfg = ScenarioConfig(
        n_policies=40,
        n_years=3,
        lambda0=2.0,
        xi0=float(np.exp(8)),
        nu_sev=0.7,
        theta=ThetaParams(0.3, 0.3, 0.5, 0.5),
        seed=3,
    )
    sim = simulate_portfolio(cfg)
    py, cl = tmp_path / "py.csv", tmp_path / "cl.csv"
    write_portfolio(sim, py, cl)
    loaded = load_portfolio(py, cl, RunConfig())
    assert len(loaded) == len(sim.portfolio)
    for a, b in zip(sim.portfolio, loaded):
        assert a.policy_id == b.policy_id
        assert a.years == b.years
        for ca, cb in zip(a.claims, b.claims):
            assert ca.count == cb.count
            np.testing.assert_array_equal(ca.severities, cb.severities)


def test_load_portfolio_groups_and_sorts(tmp_path):
    py = write(
        tmp_path / "py.csv",
        "policy_id,year,count\nA,2,1\nA,1,0\nB,1,2\nB,2,0\n",
    )
    cl = write(
        tmp_path / "cl.csv",
        "policy_id,year,claim_index,amount\nA,2,1,100.5\nB,1,2,50.0\nB,1,1,75.0\n",
    )
    pf = load_portfolio(py, cl, RunConfig())
    assert [p.policy_id for p in pf] == ["A", "B"]
    a, b = pf.policies
    assert a.years == [1, 2] and b.years == [1, 2]
    assert a.counts.tolist() == [0, 1]
    assert b.claims[0].severities.tolist() == [75.0, 50.0]  # claim_index order


@pytest.mark.parametrize(
    "claims_text,message",
    [
        ("policy_id,year,claim_index,amount\nA,1,1,100\nC,1,1,5\n", "orphan"),
        ("policy_id,year,claim_index,amount\nA,1,2,100\n", "claim indices"),
        ("policy_id,year,claim_index,amount\nA,1,1,100\nA,1,1,30\n", "duplicate"),
        ("policy_id,year,claim_index,amount\nA,1,1,-4\n", "amount"),
    ],
)
def test_load_portfolio_claim_errors(tmp_path, claims_text, message):
    py = write(tmp_path / "py.csv", "policy_id,year,count\nA,1,1\n")
    cl = write(tmp_path / "cl.csv", claims_text)
    with pytest.raises(ValidationError, match=message):
        load_portfolio(py, cl, RunConfig())


def test_load_portfolio_duplicate_policy_year(tmp_path):
    py = write(tmp_path / "py.csv", "policy_id,year,count\nA,1,0\nA,1,0\n")
    cl = write(tmp_path / "cl.csv", "policy_id,year,claim_index,amount\n")
    with pytest.raises(ValidationError, match="duplicate key"):
        load_portfolio(py, cl, RunConfig())


def test_load_portfolio_count_claims_mismatch_names_key(tmp_path):
    py = write(tmp_path / "py.csv", "policy_id,year,count\nA,1,1\n")
    cl = write(
        tmp_path / "cl.csv",
        "policy_id,year,claim_index,amount\nA,1,1,10\nA,1,2,20\n",
    )
    with pytest.raises(ValidationError, match="policy A year 1"):
        load_portfolio(py, cl, RunConfig())


def test_load_portfolio_unknown_covariate(tmp_path):
    py = write(tmp_path / "py.csv", "policy_id,year,count\nA,1,0\n")
    cl = write(tmp_path / "cl.csv", "policy_id,year,claim_index,amount\n")
    config = RunConfig(frequency_covariates=["age"])
    with pytest.raises(ValidationError, match="age"):
        load_portfolio(py, cl, config)


def test_categorical_expansion(tmp_path):
    py = write(
        tmp_path / "py.csv",
        "policy_id,year,count,gender,vehage\nA,1,0,M,2\nB,1,0,F,1\n",
    )
    cl = write(tmp_path / "cl.csv", "policy_id,year,claim_index,amount\n")
    config = RunConfig(
        frequency_covariates=["gender", "vehage"],
        severity_covariates=["vehage"],
        categoricals={
            "gender": {"levels": ["F", "M"], "reference": "F"},
            "vehage": {"levels": ["1", "2", "3"], "reference": "1"},
        },
    )
    pf = load_portfolio(py, cl, config)
    assert pf.freq_columns == ["(Intercept)", "gender=M", "vehage=2", "vehage=3"]
    assert pf.sev_columns == ["(Intercept)", "vehage=2", "vehage=3"]
    a, b = pf.policies
    np.testing.assert_allclose(a.freq_design, [[1.0, 1.0, 1.0, 0.0]])
    np.testing.assert_allclose(b.freq_design, [[1.0, 0.0, 0.0, 0.0]])


def test_categorical_undeclared_level(tmp_path):
    py = write(tmp_path / "py.csv", "policy_id,year,count,gender\nA,1,0,X\n")
    cl = write(tmp_path / "cl.csv", "policy_id,year,claim_index,amount\n")
    config = RunConfig(
        frequency_covariates=["gender"],
        categoricals={"gender": {"levels": ["F", "M"], "reference": "F"}},
    )
    with pytest.raises(ValidationError, match="not declared"):
        load_portfolio(py, cl, config)


def test_year_filter(tmp_path):
    py = write(tmp_path / "py.csv", "policy_id,year,count\nA,1,0\nA,2,0\nB,2,0\n")
    cl = write(tmp_path / "cl.csv", "policy_id,year,claim_index,amount\n")
    pf = load_portfolio(py, cl, RunConfig(), years=[2])
    assert [p.policy_id for p in pf] == ["A", "B"]
    assert all(p.years == [2] for p in pf)
    with pytest.raises(ValidationError, match="no policy-year rows"):
        load_portfolio(py, cl, RunConfig(), years=[99])


def test_run_config_validation(tmp_path):
    good = write(tmp_path / "c.json", '{"family": "gaussian", "seed": 5}')
    assert load_run_config(good).seed == 5
    bad_json = write(tmp_path / "b.json", "{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        load_run_config(bad_json)
    unknown = write(tmp_path / "u.json", '{"familyy": "gaussian"}')
    with pytest.raises(ValidationError, match="unknown keys"):
        load_run_config(unknown)
    bad_family = write(tmp_path / "f.json", '{"family": "clayton"}')
    with pytest.raises(ValidationError, match="family"):
        load_run_config(bad_family)
    t_without_df = write(tmp_path / "t.json", '{"family": "t"}')
    with pytest.raises(ValidationError, match="nu_df"):
        load_run_config(t_without_df)


def test_scenario_config_load(tmp_path):
    path = write(
        tmp_path / "s.json",
        '{"n_policies": 5, "n_years": 2, "lambda0": 2.0, "xi0": 100.0,'
        ' "nu_sev": 0.7, "theta": [0.3, 0.3, 0.5, 0.5], "seed": 1}',
    )
    cfg = load_scenario_config(path)
    assert cfg.n_policies == 5
    assert cfg.theta == ThetaParams(0.3, 0.3, 0.5, 0.5)
    bad = write(tmp_path / "sb.json", '{"n_policies": 5}')
    with pytest.raises(ValidationError):
        load_scenario_config(bad)


def test_model_params_json(tmp_path):
    path = write(
        tmp_path / "p.json",
        '{"theta": [0, 0, 0, 0], "lambda": 2.0, "xi": 100.0, "nu_sev": 0.7}',
    )
    params = load_model_params_json(path)
    assert params.beta[0] == pytest.approx(np.log(2.0))
    assert params.gamma[0] == pytest.approx(np.log(100.0))
    missing = write(tmp_path / "m.json", '{"theta": [0,0,0,0]}')
    with pytest.raises(ValidationError):
        load_model_params_json(missing)


def test_write_csv_round_trips_floats(tmp_path):
    path = tmp_path / "x.csv"
    value = 1234.56789012345678
    write_csv(path, ["a", "b"], [[value, "text,with comma"]])
    import csv

    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert float(rows[0]["a"]) == value
    assert rows[0]["b"] == "text,with comma"
