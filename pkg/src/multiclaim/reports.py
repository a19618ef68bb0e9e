"""Report emission: fixed-layout text tables, CSV twins, and figures.

Every report path writes a plain-text table for reading, a CSV twin for
machines, and (where a picture helps) a PNG rendered headlessly with
metadata stripped so reruns stay byte-identical.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataio import write_csv
from .estimate import FitResult, RhoInference
from .validate import ValidationReport, lorenz_curve

__all__ = [
    "fit_report_text",
    "write_fit_report",
    "rho_report_text",
    "write_rho_report",
    "metrics_report_text",
    "write_metrics_report",
    "summarize_tables",
    "write_summary_report",
    "save_lorenz_figure",
    "save_prediction_figure",
    "save_frequency_figure",
]

plt.rcParams["figure.dpi"] = 150
plt.rcParams["savefig.bbox"] = "tight"

_PNG_META = {"Software": None}  # keep PNG bytes independent of the toolchain


def _fmt_p(p: float) -> str:
    return "<.0001" if p < 1e-4 else f"{p:.4f}"


def _star(p: float) -> str:
    return "*" if p < 0.05 else ""


def _table(headers: list[str], rows: list[list[str]], title: str = "") -> str:
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in rows)) if rows else len(headers[i])
        for i in range(len(headers))
    ]
    lines = []
    if title:
        lines.append(title)
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))
    lines.append(sep)
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append(sep)
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    lines.append(sep)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Fit report (parameter / est / std.error / t / p-value, with sections)
# ---------------------------------------------------------------------------

def _fit_rows(fit_result: FitResult, freq_columns, sev_columns):
    names = []
    p = fit_result.params.beta.size
    q = fit_result.params.gamma.size
    freq_names = list(freq_columns) if freq_columns else [f"x{i}" for i in range(p)]
    sev_names = list(sev_columns) if sev_columns else [f"w{i}" for i in range(q)]
    names += [("Frequency part", n) for n in freq_names[:p]]
    names += [("Severity part", n) for n in sev_names[:q]]
    names += [("Severity part", "nu_sev")]
    names += [
        ("Copula part", f"theta{i + 1}")
        for i, free in enumerate(fit_result.theta_mask)
        if free
    ]
    rows = []
    for (section, label), est, se, t, pv in zip(
        names,
        fit_result.estimates,
        fit_result.std_errors,
        fit_result.tstats,
        fit_result.pvalues,
    ):
        rows.append((section, label, est, se, t, pv))
    return rows


def fit_report_text(fit_result: FitResult, freq_columns=None, sev_columns=None) -> str:
    rows = _fit_rows(fit_result, freq_columns, sev_columns)
    out = []
    current = None
    body = []
    for section, label, est, se, t, pv in rows:
        if section != current:
            body.append([f"** {section} **", "", "", "", "", ""])
            current = section
        body.append([label, f"{est:.3f}", f"{se:.3f}", f"{t:.3f}", _fmt_p(pv), _star(pv)])
    out.append(
        _table(
            ["parameter", "est", "std.error", "t", "p-value", ""],
            body,
            title="Estimation result",
        )
    )
    out.append(f"log-likelihood: {fit_result.loglik:.6f}\n")
    out.append(
        f"policies: {fit_result.n_policies}  claims: {fit_result.n_claims}\n"
    )
    conv = fit_result.convergence
    out.append(
        "convergence: iterations={iterations} grad_inf_norm={grad_inf_norm:.3g} "
        "cdf_clamps={cdf_clamps} variance_floors={variance_floors}\n".format(**conv)
    )
    return "".join(out)


def write_fit_report(fit_result: FitResult, out_dir, freq_columns=None, sev_columns=None):
    out_dir = _ensure_dir(out_dir)
    text = fit_report_text(fit_result, freq_columns, sev_columns)
    (out_dir / "fit_report.txt").write_text(text, encoding="utf-8")
    rows = [
        [label, est, se, t, pv, _star(pv)]
        for _, label, est, se, t, pv in _fit_rows(fit_result, freq_columns, sev_columns)
    ]
    write_csv(
        out_dir / "fit_report.csv",
        ["parameter", "est", "std_error", "t", "p_value", "significant_0.05"],
        rows,
    )
    return text


# ---------------------------------------------------------------------------
# Derived-correlation report
# ---------------------------------------------------------------------------

def rho_report_text(inference: RhoInference) -> str:
    body = [
        [name, f"{est:.4f}", f"{se:.3f}", f"{t:.3f}", _fmt_p(pv), _star(pv)]
        for name, est, se, t, pv in zip(
            inference.names,
            inference.estimates,
            inference.std_errors,
            inference.tstats,
            inference.pvalues,
        )
    ]
    return _table(
        ["parameter", "est", "std.error", "t", "p-value", ""],
        body,
        title="Derived correlation estimates (delta method)",
    )


def write_rho_report(inference: RhoInference, out_dir):
    out_dir = _ensure_dir(out_dir)
    text = rho_report_text(inference)
    (out_dir / "rho_report.txt").write_text(text, encoding="utf-8")
    rows = [
        [name, est, se, t, pv, _star(pv)]
        for name, est, se, t, pv in zip(
            inference.names,
            inference.estimates,
            inference.std_errors,
            inference.tstats,
            inference.pvalues,
        )
    ]
    write_csv(
        out_dir / "rho_report.csv",
        ["parameter", "est", "std_error", "t", "p_value", "significant_0.05"],
        rows,
    )
    return text


# ---------------------------------------------------------------------------
# Validation metrics (one column per model variant)
# ---------------------------------------------------------------------------

_VARIANT_LABELS = {
    "full": "Full",
    "nested1": "Nested 1",
    "nested2": "Nested 2",
    "nested3": "Nested 3",
}


def metrics_report_text(reports: dict[str, ValidationReport]) -> str:
    variants = list(reports)
    headers = [""] + [_VARIANT_LABELS.get(v, v) for v in variants]
    body = []
    for metric in ("RMSE", "MSE", "MAE", "Gini"):
        row = [metric]
        for v in variants:
            value = reports[v].as_dict()[metric]
            row.append(f"{value:.4f}" if metric == "Gini" else f"{value:.4f}")
        body.append(row)
    return _table(headers, body, title="Hold-out prediction error")


def write_metrics_report(reports: dict[str, ValidationReport], out_dir):
    out_dir = _ensure_dir(out_dir)
    text = metrics_report_text(reports)
    (out_dir / "metrics.txt").write_text(text, encoding="utf-8")
    variants = list(reports)
    rows = [
        [metric] + [reports[v].as_dict()[metric] for v in variants]
        for metric in ("RMSE", "MSE", "MAE", "Gini")
    ]
    write_csv(out_dir / "metrics.csv", ["metric"] + variants, rows)
    return text


# ---------------------------------------------------------------------------
# Data summaries (claim counts by year, average severity by frequency)
# ---------------------------------------------------------------------------

def summarize_tables(
    py_rows: list[dict], claim_rows: list[dict], test_years: list[int] | None = None
):
    """Frequency-by-year and severity-by-frequency summary tables.

    Returns (frequency_table, severity_table) where each is a dict with
    'headers' and 'rows' ready for text/CSV emission.
    """
    test_years = sorted(test_years or [])
    years = sorted({int(r["year"]) for r in py_rows})
    train_years = [y for y in years if y not in test_years]
    counts = {}
    for r in py_rows:
        key = (int(r["year"]), int(r["count"]))
        counts[key] = counts.get(key, 0) + 1
    max_freq = max((int(r["count"]) for r in py_rows), default=0)

    def column_total(year):
        return sum(counts.get((year, f), 0) for f in range(max_freq + 1))

    train_total = sum(column_total(y) for y in train_years)
    test_total = sum(column_total(y) for y in test_years)

    headers = ["frequency"] + [str(y) for y in train_years] + ["Count", "% of Total"]
    headers += [str(y) for y in test_years] + (["Test %"] if test_years else [])
    freq_rows = []
    for f in range(max_freq + 1):
        row_count = sum(counts.get((y, f), 0) for y in train_years)
        row = [f] + [counts.get((y, f), 0) for y in train_years]
        row += [row_count, round(100.0 * row_count / train_total, 2) if train_total else 0.0]
        if test_years:
            test_count = sum(counts.get((y, f), 0) for y in test_years)
            row += [counts.get((y, f), 0) for y in test_years]
            row += [round(100.0 * test_count / test_total, 2) if test_total else 0.0]
        freq_rows.append(row)
    total_row = ["Count"] + [column_total(y) for y in train_years] + [train_total, 100.0]
    if test_years:
        total_row += [column_total(y) for y in test_years] + [100.0]
    freq_rows.append(total_row)
    freq_table = {"headers": headers, "rows": freq_rows}

    count_by_key = {(r["policy_id"], int(r["year"])): int(r["count"]) for r in py_rows}
    cells: dict[tuple[int, int], list[float]] = {}
    for r in claim_rows:
        key = (r["policy_id"], int(r["year"]))
        if key not in count_by_key:
            continue
        freq = count_by_key[key]
        cells.setdefault((int(r["year"]), freq), []).append(float(r["amount"]))

    sev_headers = ["frequency"] + [str(y) for y in years] + ["Avg. severity"]
    sev_rows = []
    for f in range(1, max_freq + 1):
        row = [f]
        all_amounts = []
        for y in years:
            amounts = cells.get((y, f), [])
            row.append(round(float(np.mean(amounts)), 2) if amounts else "-")
            all_amounts += amounts
        row.append(round(float(np.mean(all_amounts)), 2) if all_amounts else "-")
        sev_rows.append(row)
    bottom = ["Avg. severity"]
    all_amounts = []
    for y in years:
        amounts = [a for (yy, f), vals in cells.items() if yy == y for a in vals]
        bottom.append(round(float(np.mean(amounts)), 2) if amounts else "-")
        all_amounts += amounts
    bottom.append(round(float(np.mean(all_amounts)), 2) if all_amounts else "-")
    sev_rows.append(bottom)
    sev_table = {"headers": sev_headers, "rows": sev_rows}
    return freq_table, sev_table


def write_summary_report(freq_table, sev_table, out_dir):
    out_dir = _ensure_dir(out_dir)
    text = _table(
        freq_table["headers"],
        [[str(c) for c in row] for row in freq_table["rows"]],
        title="Number of observations by frequency and year",
    )
    text += "\n" + _table(
        sev_table["headers"],
        [[str(c) for c in row] for row in sev_table["rows"]],
        title="Average severity by frequency and year",
    )
    (out_dir / "summary.txt").write_text(text, encoding="utf-8")
    write_csv(out_dir / "counts_by_year.csv", freq_table["headers"], freq_table["rows"])
    write_csv(out_dir / "severity_by_year.csv", sev_table["headers"], sev_table["rows"])
    return text


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _ensure_dir(out_dir):
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def save_lorenz_figure(actual, predictions: dict[str, np.ndarray], path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], color="0.4", lw=1, ls="--", label="equality")
    for variant, predicted in predictions.items():
        x, y = lorenz_curve(actual, predicted)
        ax.plot(x, y, lw=1.5, label=_VARIANT_LABELS.get(variant, variant))
    ax.set_xlabel("cumulative share of policies (ordered by score)")
    ax.set_ylabel("cumulative share of losses")
    ax.legend(frameon=False, fontsize=8)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_prediction_figure(actual, predicted, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.scatter(predicted, actual, s=8, alpha=0.5, edgecolors="none")
    lim = max(float(np.max(predicted)), float(np.max(actual)), 1.0)
    ax.plot([0, lim], [0, lim], color="0.4", lw=1, ls="--")
    ax.set_xlabel("predicted aggregate loss")
    ax.set_ylabel("actual aggregate loss")
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)


def save_frequency_figure(freq_table, path) -> None:
    headers = freq_table["headers"]
    year_cols = [i for i, h in enumerate(headers) if h.isdigit()]
    rows = [r for r in freq_table["rows"] if isinstance(r[0], int)]
    freqs = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / max(len(year_cols), 1)
    for k, col in enumerate(year_cols):
        ax.bar(
            np.array(freqs) + k * width,
            [r[col] for r in rows],
            width=width,
            label=headers[col],
        )
    ax.set_yscale("log")
    ax.set_xlabel("claims per year")
    ax.set_ylabel("policy-years")
    ax.legend(frameon=False, fontsize=8)
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
