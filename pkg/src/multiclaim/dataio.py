"""CSV schemas, run configuration, and portfolio loading.

Two input files describe a portfolio:

* policy-year file: ``policy_id, year, count`` plus covariate columns;
  one row per policy per observed year, (policy_id, year) unique.
* claims file: ``policy_id, year, claim_index, amount``; claim indices for a
  (policy_id, year) must be exactly 1..count of the matching policy-year row.

Categorical covariates are declared in the run config with their levels and
a reference level, and expand to one dummy column per non-reference level.
All CSV output is UTF-8 with '.' decimals and RFC-4180 quoting.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
import numpy as np

from .dependence import ThetaParams
from .errors import ValidationError
from .estimate import ModelParams
from .portfolio import PolicyHistory, Portfolio, YearClaim
from .simulate import ScenarioConfig, SimulatedPortfolio

__all__ = [
    "RunConfig",
    "load_run_config",
    "load_portfolio",
    "write_portfolio",
    "load_scenario_config",
    "write_fit_result_json",
    "load_model_params_json",
    "write_csv",
]


@dataclass
class RunConfig:
    """Fit/predict pipeline settings read from a JSON file."""

    frequency_covariates: list[str] = field(default_factory=list)
    severity_covariates: list[str] = field(default_factory=list)
    categoricals: dict[str, dict] = field(default_factory=dict)
    family: str = "gaussian"
    nu_df: float | None = None
    quad_nodes: int = 64
    mixing_nodes: int = 32
    max_iter: int = 300
    gtol_rel: float = 1e-5
    seed: int = 0
    train_years: list[int] = field(default_factory=list)
    test_years: list[int] = field(default_factory=list)
    prediction_samples: int = 5000
    workers: int = 1

    def __post_init__(self):
        if self.family not in ("gaussian", "t"):
            raise ValidationError(f"unknown copula family {self.family!r}")
        if self.family == "t" and (self.nu_df is None or self.nu_df <= 0):
            raise ValidationError("t family needs positive nu_df")
        for col, spec in self.categoricals.items():
            if "levels" not in spec or "reference" not in spec:
                raise ValidationError(
                    f"categorical {col!r} needs 'levels' and 'reference'"
                )
            if spec["reference"] not in spec["levels"]:
                raise ValidationError(
                    f"categorical {col!r}: reference level not among levels"
                )


def load_run_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {path}: invalid JSON ({exc})") from exc
    known = {f for f in RunConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ValidationError(f"config {path}: unknown keys {sorted(unknown)}")
    return RunConfig(**raw)


def load_scenario_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"scenario {path}: invalid JSON ({exc})") from exc
    try:
        theta = ThetaParams.from_sequence(raw.pop("theta"))
        return ScenarioConfig(theta=theta, **raw)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"scenario {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# CSV primitives
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty file")
        rows = list(reader)
    return list(reader.fieldnames), rows


def _parse_int(value: str, where: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: expected integer, got {value!r}") from exc


def _parse_float(value: str, where: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: expected number, got {value!r}") from exc


# ---------------------------------------------------------------------------
# Design-row expansion
# ---------------------------------------------------------------------------

def _design_columns(covariates: list[str], config: RunConfig) -> list[str]:
    cols = ["(Intercept)"]
    for cov in covariates:
        if cov in config.categoricals:
            spec = config.categoricals[cov]
            cols += [
                f"{cov}={level}"
                for level in spec["levels"]
                if level != spec["reference"]
            ]
        else:
            cols.append(cov)
    return cols


def _design_row(raw: dict, covariates: list[str], config: RunConfig, where: str) -> list[float]:
    row = [1.0]
    for cov in covariates:
        if cov not in raw:
            raise ValidationError(f"{where}: unknown column {cov!r}")
        value = raw[cov]
        if cov in config.categoricals:
            spec = config.categoricals[cov]
            if value not in spec["levels"]:
                raise ValidationError(
                    f"{where}: level {value!r} of {cov!r} not declared"
                )
            row += [
                1.0 if value == level else 0.0
                for level in spec["levels"]
                if level != spec["reference"]
            ]
        else:
            row.append(_parse_float(value, f"{where}, column {cov!r}"))
    return row


# ---------------------------------------------------------------------------
# Portfolio load / write
# ---------------------------------------------------------------------------

def load_portfolio(
    policy_year_path,
    claims_path,
    config: RunConfig,
    years: list[int] | None = None,
) -> Portfolio:
    """Read, validate and group the two CSV files into a Portfolio.

    ``years`` restricts to a subset of calendar years (train/test split).
    """
    py_cols, py_rows = _read_csv(policy_year_path)
    for required in ("policy_id", "year", "count"):
        if required not in py_cols:
            raise ValidationError(f"{policy_year_path}: missing column {required!r}")
    for cov in config.frequency_covariates + config.severity_covariates:
        if cov not in py_cols:
            raise ValidationError(
                f"{policy_year_path}: config references unknown column {cov!r}"
            )

    counts: dict[tuple[str, int], int] = {}
    covrows: dict[tuple[str, int], dict] = {}
    for i, raw in enumerate(py_rows, start=2):
        where = f"{policy_year_path} row {i}"
        key = (raw["policy_id"], _parse_int(raw["year"], where))
        if years is not None and key[1] not in years:
            continue
        if key in counts:
            raise ValidationError(f"{where}: duplicate key {key}")
        count = _parse_int(raw["count"], where)
        if count < 0:
            raise ValidationError(f"{where}: negative count")
        counts[key] = count
        covrows[key] = raw

    claims: dict[tuple[str, int], dict[int, float]] = {}
    _, claim_rows = _read_csv(claims_path)
    for i, raw in enumerate(claim_rows, start=2):
        where = f"{claims_path} row {i}"
        for required in ("policy_id", "year", "claim_index", "amount"):
            if required not in raw or raw[required] is None:
                raise ValidationError(f"{where}: missing column {required!r}")
        key = (raw["policy_id"], _parse_int(raw["year"], where))
        if years is not None and key[1] not in years:
            continue
        if key not in counts:
            raise ValidationError(f"{where}: orphan claim for {key}")
        idx = _parse_int(raw["claim_index"], where)
        amount = _parse_float(raw["amount"], where)
        if amount <= 0:
            raise ValidationError(f"{where}: non-positive amount")
        slot = claims.setdefault(key, {})
        if idx in slot:
            raise ValidationError(f"{where}: duplicate claim_index {idx} for {key}")
        slot[idx] = amount

    for key, count in counts.items():
        got = sorted(claims.get(key, {}))
        if got != list(range(1, count + 1)):
            raise ValidationError(
                f"policy {key[0]} year {key[1]}: count {count} but claim indices {got}"
            )

    by_policy: dict[str, list[int]] = {}
    for pid, year in counts:
        by_policy.setdefault(pid, []).append(year)

    policies = []
    for pid in sorted(by_policy):
        policy_years = sorted(by_policy[pid])
        year_claims, xrows, wrows = [], [], []
        for year in policy_years:
            key = (pid, year)
            amounts = [claims.get(key, {}).get(j) for j in range(1, counts[key] + 1)]
            year_claims.append(YearClaim(counts[key], np.array(amounts, dtype=float)))
            where = f"policy {pid} year {year}"
            xrows.append(_design_row(covrows[key], config.frequency_covariates, config, where))
            wrows.append(_design_row(covrows[key], config.severity_covariates, config, where))
        policies.append(
            PolicyHistory(
                pid,
                year_claims,
                freq_design=np.array(xrows),
                sev_design=np.array(wrows),
                years=policy_years,
            )
        )
    if not policies:
        raise ValidationError("no policy-year rows after filtering")
    return Portfolio(
        policies,
        freq_columns=_design_columns(config.frequency_covariates, config),
        sev_columns=_design_columns(config.severity_covariates, config),
    )


def write_portfolio(
    sim: SimulatedPortfolio | Portfolio, policy_year_path, claims_path
) -> None:
    portfolio = sim.portfolio if isinstance(sim, SimulatedPortfolio) else sim
    py_rows, claim_rows = [], []
    for policy in portfolio:
        for t, year_claim in enumerate(policy.claims):
            year = policy.years[t]
            py_rows.append([policy.policy_id, year, year_claim.count])
            for j, amount in enumerate(year_claim.severities, start=1):
                claim_rows.append([policy.policy_id, year, j, float(amount)])
    write_csv(policy_year_path, ["policy_id", "year", "count"], py_rows)
    write_csv(claims_path, ["policy_id", "year", "claim_index", "amount"], claim_rows)


# ---------------------------------------------------------------------------
# Fitted-parameter persistence
# ---------------------------------------------------------------------------

def write_fit_result_json(fit_result, path) -> None:
    params = fit_result.params
    payload = {
        "beta": params.beta.tolist(),
        "gamma": params.gamma.tolist(),
        "nu_sev": params.nu_sev,
        "theta": params.theta.as_array().tolist(),
        "family": params.family,
        "nu_df": params.nu_df,
        "param_names": fit_result.param_names,
        "estimates": fit_result.estimates.tolist(),
        "std_errors": fit_result.std_errors.tolist(),
        "cov": fit_result.cov.tolist(),
        "loglik": fit_result.loglik,
        "theta_mask": list(fit_result.theta_mask),
        "theta_positions": {str(k): v for k, v in fit_result.theta_positions.items()},
        "n_policies": fit_result.n_policies,
        "n_claims": fit_result.n_claims,
        "convergence": fit_result.convergence,
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_model_params_json(path) -> ModelParams:
    """Model parameters from a fit-result JSON or a hand-written params file.

    Hand-written files use keys: theta (4 values), lambda/xi (or beta/gamma),
    nu_sev, family, nu_df.
    """
    with open(path, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"params {path}: invalid JSON ({exc})") from exc
    try:
        theta = ThetaParams.from_sequence(raw["theta"])
        if "beta" in raw:
            beta = np.asarray(raw["beta"], dtype=float)
        else:
            beta = np.array([np.log(float(raw["lambda"]))])
        if "gamma" in raw:
            gamma = np.asarray(raw["gamma"], dtype=float)
        else:
            gamma = np.array([np.log(float(raw["xi"]))])
        return ModelParams(
            beta=beta,
            gamma=gamma,
            nu_sev=float(raw["nu_sev"]),
            theta=theta,
            family=raw.get("family", "gaussian"),
            nu_df=raw.get("nu_df"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"params {path}: {exc}") from exc


def load_fit_result_json(path) -> dict:
    with open(path, encoding="utf-8") as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"fit result {path}: invalid JSON ({exc})") from exc
