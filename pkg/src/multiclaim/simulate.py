"""Portfolio generation from the latent two-factor representation.

Per policy: one shared factor draw r, one within-year factor v_t per year.
Count latents load (theta1, theta3) on (r, v_t); severity latents load
(theta2, theta4).  For the t family every latent of the policy is divided by
sqrt(W), W ~ chi2(nu_df)/nu_df, before the t CDF maps it to a uniform.
Severity latents are drawn only for the realized claims; marginalizing the
unused coordinates is consistent by the inheritance property of the copula.

Each policy consumes its own counter-derived RNG stream, so portfolios are
reproducible regardless of generation order or parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .dependence import ThetaParams, check_admissible
from .marginals import freq_inverse_cdf, sev_quantile
from .portfolio import PolicyHistory, Portfolio, YearClaim

__all__ = ["ScenarioConfig", "PolicyLatents", "SimulatedPortfolio", "simulate_policy", "simulate_portfolio"]


@dataclass
class ScenarioConfig:
    """Single-risk-class scenario: constant count mean ``lambda0`` and
    severity mean ``xi0`` across policies and years."""

    n_policies: int
    n_years: int
    lambda0: float
    xi0: float
    nu_sev: float
    theta: ThetaParams
    family: str = "gaussian"
    nu_df: float | None = None
    seed: int = 0
    keep_latents: bool = False

    def __post_init__(self):
        if self.n_policies < 1 or self.n_years < 1:
            raise ValueError("need at least one policy and one year")
        if not check_admissible(self.theta):
            raise ValueError("inadmissible loadings")
        if self.family not in ("gaussian", "t"):
            raise ValueError(f"unknown copula family {self.family!r}")
        if self.family == "t" and (self.nu_df is None or self.nu_df <= 0.0):
            raise ValueError("t family needs positive nu_df")


@dataclass
class PolicyLatents:
    """Raw latent draws retained for dependence diagnostics.

    ``severity_latents`` are the ones behind observed claims and are
    count-selected (a severity exists only when its year's count latent is
    high), so their pairwise correlations are biased for the model
    correlations.  ``diag_severity_latents`` hold a fixed number of draws per
    year regardless of the counts, drawn after all observables; use those for
    unbiased correlation and marginal-law checks.
    """

    shared: float
    yearly: np.ndarray
    mixing: float
    count_latents: np.ndarray
    severity_latents: list[np.ndarray]
    diag_severity_latents: np.ndarray | None = None


@dataclass
class SimulatedPortfolio:
    portfolio: Portfolio
    latents: list[PolicyLatents] = field(default_factory=list)


def _policy_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def simulate_policy(
    config: ScenarioConfig,
    policy_id: str,
    rng: np.random.Generator,
    lams=None,
    xis=None,
    n_diag_severities: int = 0,
) -> tuple[PolicyHistory, PolicyLatents]:
    """One policy history; ``lams``/``xis`` default to the scenario constants.

    ``n_diag_severities`` extra unselected severity latents per year are drawn
    after all observables, so requesting them never changes the portfolio.
    """
    theta = config.theta
    t1, t2, t3, t4 = theta.theta1, theta.theta2, theta.theta3, theta.theta4
    tau = config.n_years
    lams = np.broadcast_to(np.asarray(lams if lams is not None else config.lambda0, dtype=float), (tau,))
    xis = np.broadcast_to(np.asarray(xis if xis is not None else config.xi0, dtype=float), (tau,))

    resid_count = np.sqrt(1.0 - t1 * t1 - t3 * t3)
    resid_sev = np.sqrt(1.0 - t2 * t2 - t4 * t4)

    mixing = 1.0
    if config.family == "t":
        mixing = rng.chisquare(config.nu_df) / config.nu_df
    scale = np.sqrt(mixing)

    def to_uniform(latent):
        if config.family == "t":
            return stats.t.cdf(latent / scale, df=config.nu_df)
        return special.ndtr(latent)

    shared = rng.standard_normal()
    yearly = rng.standard_normal(tau)
    count_latents = t1 * shared + t3 * yearly + resid_count * rng.standard_normal(tau)
    u_counts = np.minimum(to_uniform(count_latents), 1.0 - 1e-16)
    counts = np.atleast_1d(freq_inverse_cdf(u_counts, lams))

    claims = []
    sev_latents = []
    for t in range(tau):
        n_t = int(counts[t])
        if n_t:
            b = t2 * shared + t4 * yearly[t] + resid_sev * rng.standard_normal(n_t)
            u = np.clip(to_uniform(b), 1e-15, 1.0 - 1e-15)
            amounts = sev_quantile(u, xis[t], config.nu_sev)
        else:
            b = np.empty(0)
            amounts = np.empty(0)
        sev_latents.append(b)
        claims.append(YearClaim(n_t, amounts))

    diag = None
    if n_diag_severities:
        diag = (
            t2 * shared
            + t4 * yearly[:, None]
            + resid_sev * rng.standard_normal((tau, n_diag_severities))
        )

    history = PolicyHistory(
        policy_id,
        claims,
        freq_design=np.ones((tau, 1)),
        sev_design=np.ones((tau, 1)),
    )
    latents = PolicyLatents(shared, yearly, mixing, count_latents, sev_latents, diag)
    return history, latents


def simulate_portfolio(
    config: ScenarioConfig, n_diag_severities: int = 0
) -> SimulatedPortfolio:
    """Independent policies, one deterministic RNG sub-stream each."""
    n_diag = n_diag_severities if config.keep_latents else 0
    policies = []
    latents = []
    width = max(1, len(str(config.n_policies - 1)))
    for i in range(config.n_policies):
        rng = _policy_rng(config.seed, i)
        history, lat = simulate_policy(
            config, f"P{i:0{width}d}", rng, n_diag_severities=n_diag
        )
        policies.append(history)
        if config.keep_latents:
            latents.append(lat)
    return SimulatedPortfolio(Portfolio(policies), latents)
