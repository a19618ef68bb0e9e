"""Monte-Carlo aggregate-loss prediction and hold-out validation metrics.

Each policy's predicted loss is the mean of simulated one-year aggregate
losses under the fitted model (covariates applied, unconditional on the
policy's own history).  Model comparison runs the full fit and its nested
variants through the same pipeline and scores RMSE / MSE / MAE and the Gini
index of the ordered Lorenz curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import ValidationError
from .estimate import (
    VARIANT_MASKS,
    FitOptions,
    FitResult,
    ModelParams,
    fit,
    pack_portfolio,
)
from .marginals import freq_inverse_cdf, sev_quantile
from .portfolio import Portfolio

__all__ = [
    "PredictionConfig",
    "ValidationReport",
    "predict_aggregate_loss",
    "predict_portfolio",
    "validation_metrics",
    "lorenz_curve",
    "gini_index",
    "nested_model_comparison",
]


@dataclass
class PredictionConfig:
    n_samples: int = 5000
    seed: int = 0
    variant: str = "full"

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("need at least one Monte Carlo sample")
        if self.variant not in VARIANT_MASKS:
            raise ValueError(f"unknown model variant {self.variant!r}")


@dataclass
class ValidationReport:
    rmse: float
    mse: float
    mae: float
    gini: float

    def as_dict(self) -> dict:
        return {"RMSE": self.rmse, "MSE": self.mse, "MAE": self.mae, "Gini": self.gini}


def _simulate_annual_losses(
    lam: float,
    xi: float,
    params: ModelParams,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """One-year aggregate losses S = sum of severities, drawn jointly from
    the fitted copula via the two-factor latent construction."""
    theta = params.theta
    t1, t2, t3, t4 = theta.theta1, theta.theta2, theta.theta3, theta.theta4
    resid_count = np.sqrt(1.0 - t1 * t1 - t3 * t3)
    resid_sev = np.sqrt(1.0 - t2 * t2 - t4 * t4)

    shared = rng.standard_normal(n_samples)
    yearly = rng.standard_normal(n_samples)
    count_latent = t1 * shared + t3 * yearly + resid_count * rng.standard_normal(n_samples)

    if params.family == "t":
        mixing = rng.chisquare(params.nu_df, n_samples) / params.nu_df
        scale = np.sqrt(mixing)
        u_count = stats.t.cdf(count_latent / scale, df=params.nu_df)
    else:
        u_count = special.ndtr(count_latent)
    counts = np.atleast_1d(freq_inverse_cdf(np.minimum(u_count, 1.0 - 1e-16), lam))

    total_claims = int(counts.sum())
    if total_claims == 0:
        return np.zeros(n_samples)
    rep = np.repeat(np.arange(n_samples), counts)
    sev_latent = (
        t2 * shared[rep] + t4 * yearly[rep] + resid_sev * rng.standard_normal(total_claims)
    )
    if params.family == "t":
        u_sev = stats.t.cdf(sev_latent / scale[rep], df=params.nu_df)
    else:
        u_sev = special.ndtr(sev_latent)
    amounts = sev_quantile(np.clip(u_sev, 1e-15, 1.0 - 1e-15), xi, params.nu_sev)
    return np.bincount(rep, weights=amounts, minlength=n_samples)


def predict_aggregate_loss(
    freq_row: np.ndarray,
    sev_row: np.ndarray,
    params: ModelParams,
    config: PredictionConfig,
    policy_index: int = 0,
) -> float:
    """Mean simulated one-year loss for one policy's covariate rows."""
    lam = float(np.exp(np.asarray(freq_row, dtype=float) @ params.beta))
    xi = float(np.exp(np.asarray(sev_row, dtype=float) @ params.gamma))
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, policy_index)))
    losses = _simulate_annual_losses(lam, xi, params, config.n_samples, rng)
    return float(losses.mean())


def predict_portfolio(
    freq_rows: np.ndarray,
    sev_rows: np.ndarray,
    params: ModelParams,
    config: PredictionConfig,
) -> np.ndarray:
    """Predicted mean losses for many policies; one RNG sub-stream each, so
    the result is independent of evaluation order."""
    freq_rows = np.atleast_2d(freq_rows)
    sev_rows = np.atleast_2d(sev_rows)
    return np.array(
        [
            predict_aggregate_loss(freq_rows[i], sev_rows[i], params, config, i)
            for i in range(freq_rows.shape[0])
        ]
    )


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def lorenz_curve(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    """Ordered Lorenz curve: policies sorted by predicted score (ascending),
    x = cumulative share of policies, y = cumulative share of actual losses.

    Tied scores pool into a single straight segment, so an uninformative
    constant score yields the diagonal.
    """
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    order = np.argsort(predicted, kind="stable")
    sorted_scores = predicted[order]
    sorted_actual = actual[order]
    # Group boundaries where the (sorted) score changes.
    boundary = np.flatnonzero(np.diff(sorted_scores)) + 1
    group_counts = np.diff(np.concatenate(([0], boundary, [actual.size])))
    group_losses = np.add.reduceat(sorted_actual, np.concatenate(([0], boundary)))
    total = sorted_actual.sum()
    x = np.concatenate(([0.0], np.cumsum(group_counts) / actual.size))
    if total == 0.0:
        y = x.copy()
    else:
        y = np.concatenate(([0.0], np.cumsum(group_losses) / total))
    return x, y


def gini_index(actual, predicted) -> float:
    """Twice the area between the diagonal and the ordered Lorenz curve,
    scaled to 0-100."""
    x, y = lorenz_curve(actual, predicted)
    area_under = float(np.trapezoid(y, x))
    return 100.0 * (1.0 - 2.0 * area_under)


def validation_metrics(actual, predicted) -> ValidationReport:
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.size == 0 or actual.shape != predicted.shape:
        raise ValidationError(
            f"actual/predicted must be equal-length non-empty vectors "
            f"(got {actual.shape} and {predicted.shape})"
        )
    err = actual - predicted
    mse = float(np.mean(err**2))
    return ValidationReport(
        rmse=float(np.sqrt(mse)),
        mse=mse,
        mae=float(np.mean(np.abs(err))),
        gini=gini_index(actual, predicted),
    )


# ---------------------------------------------------------------------------
# Nested model comparison
# ---------------------------------------------------------------------------

@dataclass
class ComparisonResult:
    reports: dict[str, ValidationReport]
    fits: dict[str, FitResult]
    predictions: dict[str, np.ndarray]
    actual: np.ndarray
    policy_ids: list[str] = field(default_factory=list)


def nested_model_comparison(
    train: Portfolio,
    test_freq_rows: np.ndarray,
    test_sev_rows: np.ndarray,
    test_actual: np.ndarray,
    variants: tuple[str, ...] = ("full", "nested1", "nested2", "nested3"),
    fit_options: FitOptions | None = None,
    prediction: PredictionConfig | None = None,
    policy_ids: list[str] | None = None,
    family: str = "gaussian",
    nu_df: float | None = None,
) -> ComparisonResult:
    """Fit each variant on the training portfolio, predict the hold-out
    losses, and score them; one report row per variant."""
    base_options = fit_options or FitOptions()
    prediction = prediction or PredictionConfig()
    packed = pack_portfolio(train)
    reports, fits, predictions = {}, {}, {}
    for variant in variants:
        options = FitOptions(**{**base_options.__dict__, "theta_mask": VARIANT_MASKS[variant]})
        fit_result = fit(packed, options=options, family=family, nu_df=nu_df)
        predicted = predict_portfolio(
            test_freq_rows, test_sev_rows, fit_result.params, prediction
        )
        fits[variant] = fit_result
        predictions[variant] = predicted
        reports[variant] = validation_metrics(test_actual, predicted)
    return ComparisonResult(
        reports=reports,
        fits=fits,
        predictions=predictions,
        actual=np.asarray(test_actual, dtype=float),
        policy_ids=policy_ids or [],
    )
