"""Exact joint density of a multi-year claim history under the factor copula.

Conditional on the shared random effect, the years are independent, so the
joint density of counts and individual severities reduces to a single
integral over the factor:

    h(history) = integral over r of
        prod_t [ sev_density_t(y | r) * count_prob_t(n | y, r) ] phi(r) dr

evaluated here by Gauss-Hermite quadrature with log-sum-exp accumulation.
Within a year, conditional on the factor at r, the severity normal scores are
multivariate normal with mean r*theta2 and one-factor covariance
(1-rho2) I + (rho2-theta2^2) J, and the count score is normal with closed-form
mean/variance given the factor and the year's severity scores; both laws are
evaluated without forming or inverting any matrix.

The t-copula variant mixes the latent scale with W ~ chi2(nu_df)/nu_df and
integrates (r, w) on a tensor rule; scores then use t quantiles and the
conditional laws shrink by 1/sqrt(w).

``oracle_density`` is a deliberately independent cross-check: it conditions
on the severity coordinates by generic matrix algebra and integrates the
remaining count box adaptively (the signed sum over the box vertices of the
conditional normal CDF).  It is capped at desk scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

from .dependence import RhoParams, ThetaParams, build_sigma, check_admissible, rho_from_theta
from .marginals import freq_cdf, sev_cdf, sev_logpdf
from .portfolio import PolicyHistory, YearClaim

__all__ = [
    "DependenceParams",
    "QuadratureRule",
    "EvalDiagnostics",
    "ConditionalFrequencyLaw",
    "ConditionalSeverityLaw",
    "cond_freq_law",
    "cond_sev_logdensity",
    "cond_freq_prob",
    "log_density_gaussian",
    "log_density_t",
    "oracle_density",
    "normal_scores",
    "CDF_CLAMP",
]

LOG_2PI = math.log(2.0 * math.pi)
# CDF values are pushed off 0/1 by this much before the normal/t quantile.
CDF_CLAMP = 1e-12
# Conditional count variance can lose positivity to roundoff near the
# admissibility boundary; floor and flag.
VARIANCE_FLOOR = 1e-12


@dataclass
class EvalDiagnostics:
    """Counters surfaced by density/likelihood evaluations."""

    cdf_clamps: int = 0
    variance_floors: int = 0

    def merge(self, other: "EvalDiagnostics") -> None:
        self.cdf_clamps += other.cdf_clamps
        self.variance_floors += other.variance_floors


@dataclass(frozen=True)
class DependenceParams:
    """Admissible loadings plus the correlations they generate.

    ``resid_var`` and ``shared_var`` are the diagonal/off-diagonal pieces of
    the one-factor severity covariance (1-rho2) I + (rho2-theta2^2) J.
    """

    theta: ThetaParams
    rho: RhoParams

    @classmethod
    def from_theta(cls, theta: ThetaParams) -> "DependenceParams":
        if not check_admissible(theta):
            raise ValueError(
                "inadmissible loadings: need theta1^2+theta3^2 < 1 and "
                "theta2^2+theta4^2 < 1"
            )
        return cls(theta=theta, rho=rho_from_theta(theta))

    @property
    def resid_var(self) -> float:
        return 1.0 - self.rho.rho2

    @property
    def shared_var(self) -> float:
        return self.rho.rho2 - self.theta.theta2**2

    @property
    def cross_load(self) -> float:
        # Count-severity coupling left after the shared factor: theta3*theta4.
        return self.theta.theta3 * self.theta.theta4


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights for an expectation integral; weights sum to one."""

    nodes: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray = field(repr=False, default=None)
    raw_weight_sum: float = 1.0

    def __post_init__(self):
        if self.log_weights is None:
            object.__setattr__(self, "log_weights", np.log(self.weights))

    @classmethod
    def gauss_hermite(cls, n_nodes: int = 64) -> "QuadratureRule":
        """Rule for E[f(R)] with R standard normal (r = sqrt(2) x)."""
        if n_nodes < 1:
            raise ValueError("need at least one node")
        x, w = np.polynomial.hermite.hermgauss(n_nodes)
        weights = w / math.sqrt(math.pi)
        raw = float(weights.sum())
        return cls(nodes=math.sqrt(2.0) * x, weights=weights / raw, raw_weight_sum=raw)

    @classmethod
    def chi_square_mixing(cls, nu_df: float, n_nodes: int = 32) -> "QuadratureRule":
        """Rule for E[f(W)] with W ~ chi2(nu_df)/nu_df.

        Integrates on the log scale (w = exp(s)) against a Gauss-Hermite rule
        moment-matched to log W, which handles the right skew of the mixing
        density.
        """
        if nu_df <= 0.0:
            raise ValueError("degrees of freedom must be positive")
        x, w = np.polynomial.hermite.hermgauss(n_nodes)
        half = 0.5 * nu_df
        center = special.digamma(half) + math.log(2.0) - math.log(nu_df)
        spread = math.sqrt(special.polygamma(1, half))
        s = center + math.sqrt(2.0) * spread * x
        nodes = np.exp(s)
        # log of nu * chi2_pdf(nu*w; nu), plus the dw = w ds Jacobian.
        log_fw = (
            math.log(nu_df)
            + (half - 1.0) * (math.log(nu_df) + s)
            - nu_df * nodes / 2.0
            - half * math.log(2.0)
            - special.gammaln(half)
        )
        log_weights = np.log(w) + x**2 + math.log(math.sqrt(2.0) * spread) + log_fw + s
        raw = float(np.exp(special.logsumexp(log_weights)))
        log_weights -= math.log(raw)
        # Drop nodes whose weight underflows a double; they contribute nothing.
        keep = log_weights > -700.0
        log_weights = log_weights[keep]
        log_weights -= special.logsumexp(log_weights)
        return cls(
            nodes=nodes[keep],
            weights=np.exp(log_weights),
            log_weights=log_weights,
            raw_weight_sum=raw,
        )


@dataclass(frozen=True)
class ConditionalFrequencyLaw:
    """Normal law of the count score given the factor and the year's
    severity scores."""

    mu: float
    sigma: float


@dataclass(frozen=True)
class ConditionalSeverityLaw:
    """Normal law of a year's severity scores given the factor."""

    mean: np.ndarray
    cov: np.ndarray


def _clamp_unit(u, diagnostics: EvalDiagnostics | None):
    u = np.asarray(u, dtype=float)
    clipped = np.clip(u, CDF_CLAMP, 1.0 - CDF_CLAMP)
    if diagnostics is not None:
        diagnostics.cdf_clamps += int(np.count_nonzero(clipped != u))
    return clipped


def normal_scores(u, diagnostics: EvalDiagnostics | None = None):
    """Standard-normal scores of probabilities, clamped off the boundary."""
    return special.ndtri(_clamp_unit(u, diagnostics))


# ---------------------------------------------------------------------------
# Closed-form per-year conditional laws
# ---------------------------------------------------------------------------

def _sev_core_logpdf(score_sum, score_sq_sum, n, r, dep: DependenceParams, w=1.0):
    """Log density of n severity scores under the one-factor conditional law,
    as a function of their sum and sum of squares only (exchangeability).

    ``w`` rescales the latent covariance by 1/w and the factor by 1/sqrt(w)
    (the t-copula mixing); w = 1 is the Gaussian case.
    """
    a = dep.resid_var
    b = dep.shared_var
    denom = a + n * b
    t2 = dep.theta.theta2
    rw = r / np.sqrt(w)
    dev_sum = score_sum - n * t2 * rw
    dev_sq = score_sq_sum - 2.0 * t2 * rw * score_sum + n * (t2 * rw) ** 2
    quad_form = dev_sq / a - (b / (a * denom)) * dev_sum**2
    logdet = (n - 1) * math.log(a) + np.log(denom)
    return -0.5 * (n * LOG_2PI + logdet - n * np.log(w) + w * quad_form)


def _freq_law(score_sum, n, r, dep: DependenceParams, w=1.0, diagnostics=None):
    """Conditional mean/sd of the count score given factor and severity
    scores; closed form, no matrix inversion."""
    a = dep.resid_var
    b = dep.shared_var
    denom = a + n * b
    t1, t2 = dep.theta.theta1, dep.theta.theta2
    c34 = dep.cross_load
    rw = r / np.sqrt(w)
    mu = t1 * rw + c34 * (score_sum - n * t2 * rw) / denom
    var = 1.0 - t1 * t1 - n * c34 * c34 / denom
    var_arr = np.asarray(var, dtype=float)
    n_floors = int(np.count_nonzero(var_arr < VARIANCE_FLOOR))
    if n_floors and diagnostics is not None:
        diagnostics.variance_floors += n_floors
    var = np.maximum(var_arr, VARIANCE_FLOOR)
    return mu, np.sqrt(var / w)


def cond_freq_law(
    year: YearClaim, r: float, dep: DependenceParams, xi: float, nu_sev: float
) -> ConditionalFrequencyLaw:
    """Conditional count-score law for one year at factor value r."""
    scores = normal_scores(sev_cdf(year.severities, xi, nu_sev)) if year.count else np.empty(0)
    mu, sigma = _freq_law(scores.sum(), year.count, r, dep)
    return ConditionalFrequencyLaw(float(mu), float(sigma))


def cond_sev_law(n: int, r: float, dep: DependenceParams) -> ConditionalSeverityLaw:
    t2 = dep.theta.theta2
    cov = dep.resid_var * np.eye(n) + dep.shared_var * np.ones((n, n))
    return ConditionalSeverityLaw(mean=r * t2 * np.ones(n), cov=cov)


def cond_sev_logdensity(
    year: YearClaim,
    r: float,
    dep: DependenceParams,
    xi: float,
    nu_sev: float,
    diagnostics: EvalDiagnostics | None = None,
) -> float:
    """Log density of one year's severities given the factor at r, including
    the change-of-variable terms from amounts to normal scores."""
    if year.count < 1:
        raise ValueError("conditional severity density needs at least one claim")
    u = sev_cdf(year.severities, xi, nu_sev)
    scores = normal_scores(u, diagnostics)
    jacobian = float(
        np.sum(sev_logpdf(year.severities, xi, nu_sev) - stats.norm.logpdf(scores))
    )
    core = _sev_core_logpdf(
        float(scores.sum()), float(scores @ scores), year.count, r, dep
    )
    return float(core) + jacobian


def cond_freq_prob(
    year: YearClaim,
    r: float,
    dep: DependenceParams,
    lam: float,
    xi: float,
    nu_sev: float,
    diagnostics: EvalDiagnostics | None = None,
) -> float:
    """P(N_t = n_t | severities, factor at r), clamped to [0, 1]."""
    if year.count:
        scores = normal_scores(sev_cdf(year.severities, xi, nu_sev), diagnostics)
        score_sum = float(scores.sum())
    else:
        score_sum = 0.0
    mu, sigma = _freq_law(score_sum, year.count, r, dep, diagnostics=diagnostics)
    hi = normal_scores(freq_cdf(year.count, lam), diagnostics)
    lo = (
        normal_scores(freq_cdf(year.count - 1, lam), diagnostics)
        if year.count > 0
        else -np.inf
    )
    p = special.ndtr((hi - mu) / sigma) - special.ndtr((lo - mu) / sigma)
    return float(min(max(p, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Joint densities
# ---------------------------------------------------------------------------

def _marginal_arrays(history: PolicyHistory, lams, xis) -> tuple[np.ndarray, np.ndarray]:
    lams = np.broadcast_to(np.asarray(lams, dtype=float), (history.n_years,))
    xis = np.broadcast_to(np.asarray(xis, dtype=float), (history.n_years,))
    if np.any(lams <= 0.0) or np.any(xis <= 0.0):
        raise ValueError("marginal means must be positive")
    return lams, xis


def log_density_gaussian(
    history: PolicyHistory,
    dep: DependenceParams,
    lams,
    xis,
    nu_sev: float,
    quad: QuadratureRule,
    diagnostics: EvalDiagnostics | None = None,
) -> float:
    """Exact log density of a multi-year history under the Gaussian factor
    copula, by factor quadrature.

    ``lams``/``xis`` are per-year count/severity means (scalars broadcast).
    """
    lams, xis = _marginal_arrays(history, lams, xis)
    r = quad.nodes
    total = np.zeros_like(r)
    jacobian = 0.0
    for t, year in enumerate(history.claims):
        n = year.count
        hi = normal_scores(freq_cdf(n, lams[t]), diagnostics)
        lo = normal_scores(freq_cdf(n - 1, lams[t]), diagnostics) if n > 0 else -np.inf
        if n:
            u = sev_cdf(year.severities, xis[t], nu_sev)
            scores = normal_scores(u, diagnostics)
            s1, s2 = float(scores.sum()), float(scores @ scores)
            jacobian += float(
                np.sum(
                    sev_logpdf(year.severities, xis[t], nu_sev)
                    - stats.norm.logpdf(scores)
                )
            )
            total += _sev_core_logpdf(s1, s2, n, r, dep)
        else:
            s1 = 0.0
        mu, sigma = _freq_law(s1, n, r, dep, diagnostics=diagnostics)
        prob = np.clip(special.ndtr((hi - mu) / sigma) - special.ndtr((lo - mu) / sigma), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            total += np.log(prob)
    return float(special.logsumexp(total + quad.log_weights)) + jacobian


def _t_scores(u, nu_df: float, diagnostics: EvalDiagnostics | None):
    return stats.t.ppf(_clamp_unit(u, diagnostics), df=nu_df)


def log_density_t(
    history: PolicyHistory,
    dep: DependenceParams,
    nu_df: float,
    lams,
    xis,
    nu_sev: float,
    quad: QuadratureRule,
    mixing: QuadratureRule | None = None,
    diagnostics: EvalDiagnostics | None = None,
) -> float:
    """Log density under the t copula with ``nu_df`` degrees of freedom.

    Tensor quadrature over the factor and the chi-square mixing variable;
    scores use t quantiles and the conditional laws scale by the mixing draw.
    """
    if nu_df <= 0.0:
        raise ValueError("degrees of freedom must be positive")
    lams, xis = _marginal_arrays(history, lams, xis)
    if mixing is None:
        mixing = QuadratureRule.chi_square_mixing(nu_df)
    r = quad.nodes[:, None]  # (K, 1)
    w = mixing.nodes[None, :]  # (1, M)
    total = np.zeros((quad.nodes.size, mixing.nodes.size))
    jacobian = 0.0
    for t, year in enumerate(history.claims):
        n = year.count
        hi = _t_scores(freq_cdf(n, lams[t]), nu_df, diagnostics)
        lo = _t_scores(freq_cdf(n - 1, lams[t]), nu_df, diagnostics) if n > 0 else -np.inf
        if n:
            u = sev_cdf(year.severities, xis[t], nu_sev)
            scores = _t_scores(u, nu_df, diagnostics)
            s1, s2 = float(scores.sum()), float(scores @ scores)
            jacobian += float(
                np.sum(
                    sev_logpdf(year.severities, xis[t], nu_sev)
                    - stats.t.logpdf(scores, df=nu_df)
                )
            )
            total += _sev_core_logpdf(s1, s2, n, r, dep, w=w)
        else:
            s1 = 0.0
        mu, sigma = _freq_law(s1, n, r, dep, w=w, diagnostics=diagnostics)
        prob = np.clip(special.ndtr((hi - mu) / sigma) - special.ndtr((lo - mu) / sigma), 0.0, 1.0)
        with np.errstate(divide="ignore"):
            total += np.log(prob)
    stacked = total + quad.log_weights[:, None] + mixing.log_weights[None, :]
    return float(special.logsumexp(stacked)) + jacobian


# ---------------------------------------------------------------------------
# Desk-scale oracle via generic matrix conditioning
# ---------------------------------------------------------------------------

ORACLE_MAX_YEARS = 3
ORACLE_MAX_CLAIMS = 5


def _normal_rectangle(lo: np.ndarray, hi: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> float:
    """P(lo < Z <= hi) for Z ~ N(mean, cov), by adaptive integration."""
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    zlo = (lo - mean) / sd
    zhi = (hi - mean) / sd
    dim = mean.size
    if dim == 1:
        return float(special.ndtr(zhi[0]) - special.ndtr(zlo[0]))
    dens = stats.multivariate_normal(mean=np.zeros(dim), cov=corr)
    if dim == 2:
        val, _ = integrate.dblquad(
            lambda y, x: dens.pdf([x, y]),
            zlo[0],
            zhi[0],
            lambda _: zlo[1],
            lambda _: zhi[1],
            epsabs=1e-12,
            epsrel=1e-9,
        )
    else:
        val, _ = integrate.tplquad(
            lambda z, y, x: dens.pdf([x, y, z]),
            zlo[0],
            zhi[0],
            lambda _: zlo[1],
            lambda _: zhi[1],
            lambda *_: zlo[2],
            lambda *_: zhi[2],
            epsabs=1e-10,
            epsrel=1e-8,
        )
    return float(val)


def oracle_density(
    history: PolicyHistory,
    dep: DependenceParams,
    lams,
    xis,
    nu_sev: float,
) -> float:
    """Joint density via the full latent correlation matrix: condition on the
    severity scores analytically, then integrate the count box.

    Independent of the factor-quadrature path by construction; capped at
    tau <= 3 and at most 5 claims total.
    """
    counts = history.counts
    if history.n_years > ORACLE_MAX_YEARS or int(counts.sum()) > ORACLE_MAX_CLAIMS:
        raise ValueError("oracle path is capped at desk scale (tau <= 3, <= 5 claims)")
    lams, xis = _marginal_arrays(history, lams, xis)

    sigma = build_sigma(counts, dep.rho).matrix
    offsets = np.concatenate(([0], np.cumsum(counts + 1)))[:-1]
    freq_idx = offsets
    sev_idx = np.setdiff1d(np.arange(sigma.shape[0]), freq_idx)

    hi = np.empty(history.n_years)
    lo = np.empty(history.n_years)
    for t, year in enumerate(history.claims):
        hi[t] = normal_scores(freq_cdf(year.count, lams[t]))
        lo[t] = (
            normal_scores(freq_cdf(year.count - 1, lams[t]))
            if year.count > 0
            else -np.inf
        )

    if sev_idx.size:
        scores = np.concatenate(
            [
                normal_scores(sev_cdf(year.severities, xis[t], nu_sev))
                for t, year in enumerate(history.claims)
                if year.count
            ]
        )
        cov_ss = sigma[np.ix_(sev_idx, sev_idx)]
        cov_fs = sigma[np.ix_(freq_idx, sev_idx)]
        cov_ff = sigma[np.ix_(freq_idx, freq_idx)]
        solved = np.linalg.solve(cov_ss, scores)
        cond_mean = cov_fs @ solved
        cond_cov = cov_ff - cov_fs @ np.linalg.solve(cov_ss, cov_fs.T)
        log_sev = float(
            stats.multivariate_normal(mean=np.zeros(sev_idx.size), cov=cov_ss).logpdf(
                scores
            )
        )
        jacobian = 0.0
        for t, year in enumerate(history.claims):
            if year.count:
                s = normal_scores(sev_cdf(year.severities, xis[t], nu_sev))
                jacobian += float(
                    np.sum(
                        sev_logpdf(year.severities, xis[t], nu_sev)
                        - stats.norm.logpdf(s)
                    )
                )
        sev_part = math.exp(log_sev + jacobian)
    else:
        cond_mean = np.zeros(history.n_years)
        cond_cov = sigma
        sev_part = 1.0

    box = _normal_rectangle(lo, hi, cond_mean, cond_cov)
    return sev_part * box
