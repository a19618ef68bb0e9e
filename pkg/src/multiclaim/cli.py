"""Command-line pipeline: simulate, fit, rho, predict, validate, density,
pdcheck, summarize.

Every command is a deterministic function of its input files, config and
seeds.  Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
The MULTICLAIM_WORKERS environment variable sets the default worker count
for likelihood evaluation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, reports
from .dependence import (
    RhoParams,
    ThetaParams,
    build_augmented_sigma,
    build_sigma,
    check_admissible,
    is_positive_definite,
    rho_from_theta,
)
from .errors import NumericalError, ValidationError
from .estimate import (
    VARIANT_MASKS,
    FitOptions,
    ModelParams,
    fit,
    history_log_density,
    rho_inference,
)
from .portfolio import PolicyHistory, YearClaim
from .simulate import simulate_portfolio
from .validate import (
    PredictionConfig,
    nested_model_comparison,
    predict_portfolio,
    validation_metrics,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the contract reserves 2 for numerical
    # failures, so remap.
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _workers(config) -> int:
    env = os.environ.get("MULTICLAIM_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError(f"MULTICLAIM_WORKERS={env!r} is not an integer") from exc
    return config.workers


def _fit_options(config, variant: str) -> FitOptions:
    return FitOptions(
        quad_nodes=config.quad_nodes,
        mixing_nodes=config.mixing_nodes,
        max_iter=config.max_iter,
        gtol_rel=config.gtol_rel,
        theta_mask=VARIANT_MASKS[variant],
        workers=_workers(config),
    )


def _split_years(config, portfolio_years: set[int]) -> tuple[list[int], list[int]]:
    test = list(config.test_years)
    train = list(config.train_years) or sorted(portfolio_years - set(test))
    if not train:
        raise ValidationError("no training years left after the test split")
    return train, test


def _years_in_file(path) -> set[int]:
    _, rows = dataio._read_csv(path)
    return {int(r["year"]) for r in rows}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_simulate(args) -> int:
    scenario = dataio.load_scenario_config(args.scenario)
    sim = simulate_portfolio(scenario)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_portfolio(sim, out / "policy_year.csv", out / "claims.csv")
    print(
        f"simulated {len(sim.portfolio)} policies x {scenario.n_years} years "
        f"({sim.portfolio.n_claims} claims) -> {out}"
    )
    return 0


def _load_train_portfolio(args, config):
    years = _years_in_file(args.policy_year)
    train, _ = _split_years(config, years)
    return dataio.load_portfolio(args.policy_year, args.claims, config, years=train)


def _cmd_fit(args) -> int:
    config = dataio.load_run_config(args.config)
    portfolio = _load_train_portfolio(args, config)
    options = _fit_options(config, args.variant)
    result = fit(portfolio, options=options, family=config.family, nu_df=config.nu_df)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_fit_result_json(result, out / "fit_result.json")
    text = reports.write_fit_report(
        result, out, portfolio.freq_columns, portfolio.sev_columns
    )
    print(text, end="")
    return 0


def _cmd_rho(args) -> int:
    raw = dataio.load_fit_result_json(args.fit)
    from .estimate import FitResult

    result = FitResult(
        params=ModelParams(
            beta=np.asarray(raw["beta"]),
            gamma=np.asarray(raw["gamma"]),
            nu_sev=raw["nu_sev"],
            theta=ThetaParams.from_sequence(raw["theta"]),
            family=raw.get("family", "gaussian"),
            nu_df=raw.get("nu_df"),
        ),
        param_names=raw["param_names"],
        estimates=np.asarray(raw["estimates"]),
        cov=np.asarray(raw["cov"]),
        std_errors=np.asarray(raw["std_errors"]),
        tstats=np.zeros(len(raw["param_names"])),
        pvalues=np.zeros(len(raw["param_names"])),
        loglik=raw["loglik"],
        n_policies=raw["n_policies"],
        n_claims=raw["n_claims"],
        theta_mask=tuple(raw["theta_mask"]),
        theta_positions={int(k): v for k, v in raw["theta_positions"].items()},
        convergence=raw.get("convergence", {}),
    )
    inference = rho_inference(result)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = reports.write_rho_report(inference, out)
    print(text, end="")
    return 0


def _load_test_rows(args, config):
    """Hold-out covariate rows and actual losses for the single test year."""
    if len(config.test_years) != 1:
        raise ValidationError("prediction needs exactly one test year in the config")
    test_year = config.test_years[0]
    test = dataio.load_portfolio(
        args.policy_year, args.claims, config, years=[test_year]
    )
    ids = [p.policy_id for p in test]
    freq_rows = np.vstack([p.freq_design[0] for p in test])
    sev_rows = np.vstack([p.sev_design[0] for p in test])
    actual = np.array(
        [float(sum(c.severities.sum() for c in p.claims)) for p in test]
    )
    return ids, freq_rows, sev_rows, actual


def _cmd_predict(args) -> int:
    config = dataio.load_run_config(args.config)
    params = dataio.load_model_params_json(args.fit)
    ids, freq_rows, sev_rows, actual = _load_test_rows(args, config)
    pred_config = PredictionConfig(
        n_samples=config.prediction_samples, seed=config.seed, variant=args.variant
    )
    predicted = predict_portfolio(freq_rows, sev_rows, params, pred_config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_csv(
        out / "predictions.csv",
        ["policy_id", "actual", "predicted"],
        [[pid, float(a), float(p)] for pid, a, p in zip(ids, actual, predicted)],
    )
    reports.save_prediction_figure(actual, predicted, out / "predicted_vs_actual.png")
    print(f"wrote predictions for {len(ids)} policies -> {out / 'predictions.csv'}")
    return 0


def _cmd_validate(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.predictions:
        labels = args.labels or [Path(p).stem for p in args.predictions]
        if len(labels) != len(args.predictions):
            raise ValidationError("--labels must match --predictions in length")
        metric_reports, curves = {}, {}
        for label, path in zip(labels, args.predictions):
            _, rows = dataio._read_csv(path)
            actual = np.array([float(r["actual"]) for r in rows])
            predicted = np.array([float(r["predicted"]) for r in rows])
            metric_reports[label] = validation_metrics(actual, predicted)
            curves[label] = (actual, predicted)
        text = reports.write_metrics_report(metric_reports, out)
        first = labels[0]
        reports.save_lorenz_figure(
            curves[first][0],
            {label: pred for label, (_, pred) in curves.items()},
            out / "lorenz.png",
        )
        print(text, end="")
        return 0

    if not (args.policy_year and args.claims and args.config):
        raise ValidationError(
            "validate needs either --predictions or --policy-year/--claims/--config"
        )
    config = dataio.load_run_config(args.config)
    train_portfolio = _load_train_portfolio(args, config)
    ids, freq_rows, sev_rows, actual = _load_test_rows(args, config)
    comparison = nested_model_comparison(
        train_portfolio,
        freq_rows,
        sev_rows,
        actual,
        variants=tuple(args.variants),
        fit_options=_fit_options(config, "full"),
        prediction=PredictionConfig(
            n_samples=config.prediction_samples, seed=config.seed
        ),
        policy_ids=ids,
        family=config.family,
        nu_df=config.nu_df,
    )
    for variant, predicted in comparison.predictions.items():
        dataio.write_csv(
            out / f"predictions_{variant}.csv",
            ["policy_id", "actual", "predicted"],
            [[pid, float(a), float(p)] for pid, a, p in zip(ids, actual, predicted)],
        )
    text = reports.write_metrics_report(comparison.reports, out)
    reports.save_lorenz_figure(actual, comparison.predictions, out / "lorenz.png")
    print(text, end="")
    return 0


def _cmd_density(args) -> int:
    with open(args.history, encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"history {args.history}: invalid JSON ({exc})") from exc
    try:
        claims = [
            YearClaim(int(y["count"]), np.asarray(y.get("severities", []), dtype=float))
            for y in payload["years"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"history {args.history}: {exc}") from exc
    tau = len(claims)
    params = dataio.load_model_params_json(args.params)
    freq_design = np.asarray(
        payload.get("freq_design", np.ones((tau, params.beta.size))), dtype=float
    )
    sev_design = np.asarray(
        payload.get("sev_design", np.ones((tau, params.gamma.size))), dtype=float
    )
    history = PolicyHistory("history", claims, freq_design, sev_design)
    log_density = history_log_density(
        history, params, quad_nodes=args.quad_nodes, mixing_nodes=args.mixing_nodes
    )
    print(f"log_density {log_density:.12g}")
    print(f"density {np.exp(log_density):.12g}")
    return 0


def _parse_floats(text: str, expected: int, flag: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != expected:
        raise ValidationError(f"{flag} expects {expected} comma-separated values")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ValidationError(f"{flag}: {exc}") from exc


def _cmd_pdcheck(args) -> int:
    counts = [int(v) for v in args.n.split(",")] if args.n else [1]
    if args.rho:
        rho = RhoParams.from_sequence(_parse_floats(args.rho, 5, "--rho"))
        print("rho (given): " + " ".join(f"{v:.6g}" for v in rho.as_array()))
        matrix = build_sigma(counts, rho)
    else:
        theta = ThetaParams.from_sequence(_parse_floats(args.theta, 4, "--theta"))
        rho = rho_from_theta(theta)
        admissible = check_admissible(theta)
        print(f"admissible={'true' if admissible else 'false'}")
        print("rho: " + " ".join(f"{v:.6g}" for v in rho.as_array()))
        if args.augmented:
            matrix = build_augmented_sigma(counts, rho, theta.theta1, theta.theta2)
        else:
            matrix = build_sigma(counts, rho)
    pd = is_positive_definite(matrix)
    print(f"PD={'true' if pd else 'false'} (dim={matrix.dim})")
    return 0


def _cmd_summarize(args) -> int:
    _, py_rows = dataio._read_csv(args.policy_year)
    _, claim_rows = dataio._read_csv(args.claims)
    for required, rows, path in (
        (("policy_id", "year", "count"), py_rows, args.policy_year),
        (("policy_id", "year", "claim_index", "amount"), claim_rows, args.claims),
    ):
        if rows and any(c not in rows[0] for c in required):
            raise ValidationError(f"{path}: missing one of columns {required}")
    freq_table, sev_table = reports.summarize_tables(
        py_rows, claim_rows, test_years=args.test_years
    )
    if args.out_dir:
        text = reports.write_summary_report(freq_table, sev_table, args.out_dir)
        reports.save_frequency_figure(
            freq_table, Path(args.out_dir) / "claim_frequency.png"
        )
    else:
        from .reports import _table

        text = _table(
            freq_table["headers"],
            [[str(c) for c in r] for r in freq_table["rows"]],
            title="Number of observations by frequency and year",
        )
        text += "\n" + _table(
            sev_table["headers"],
            [[str(c) for c in r] for r in sev_table["rows"]],
            title="Average severity by frequency and year",
        )
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="multiclaim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a portfolio from a scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="maximum-likelihood fit on the training years")
    p.add_argument("--policy-year", required=True)
    p.add_argument("--claims", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", default="full", choices=sorted(VARIANT_MASKS))
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("rho", help="delta-method correlation inference from a fit")
    p.add_argument("--fit", required=True, help="fit_result.json")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_rho)

    p = sub.add_parser("predict", help="Monte-Carlo hold-out loss prediction")
    p.add_argument("--fit", required=True)
    p.add_argument("--policy-year", required=True)
    p.add_argument("--claims", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", default="full", choices=sorted(VARIANT_MASKS))
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("validate", help="hold-out metrics / nested-model comparison")
    p.add_argument("--predictions", nargs="*", help="scored prediction CSVs")
    p.add_argument("--labels", nargs="*")
    p.add_argument("--policy-year")
    p.add_argument("--claims")
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.add_argument(
        "--variants",
        nargs="*",
        default=["full", "nested1", "nested2", "nested3"],
        choices=sorted(VARIANT_MASKS),
    )
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("density", help="exact log density of one claim history")
    p.add_argument("--history", required=True, help="history JSON")
    p.add_argument("--params", required=True, help="model parameter JSON")
    p.add_argument("--quad-nodes", type=int, default=64)
    p.add_argument("--mixing-nodes", type=int, default=32)
    p.set_defaults(func=_cmd_density)

    p = sub.add_parser("pdcheck", help="admissibility and positive definiteness")
    p.add_argument("--theta", help="theta1,theta2,theta3,theta4")
    p.add_argument("--rho", help="rho1,...,rho5 (bypasses the theta map)")
    p.add_argument("--n", help="comma-separated yearly claim counts", default="1")
    p.add_argument("--augmented", action="store_true", help="include the factor row")
    p.set_defaults(func=_cmd_pdcheck)

    p = sub.add_parser("summarize", help="frequency/severity summary tables")
    p.add_argument("--policy-year", required=True)
    p.add_argument("--claims", required=True)
    p.add_argument("--test-years", nargs="*", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=_cmd_summarize)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "pdcheck" and not (args.theta or args.rho):
            raise ValidationError("pdcheck needs --theta or --rho")
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
