"""Maximum likelihood for the full model and its nested variants.

The portfolio log likelihood is a sum of exact per-policy log densities
(factor quadrature); here it is evaluated in flat arrays across all
policy-years and claims at once, which is what makes the simulation-scale
replications affordable.  Optimization runs quasi-Newton on an unconstrained
scale: ``nu_sev = exp(s)`` and each loading pair mapped through
``(a, b) -> (tanh a, tanh b * sqrt(1 - tanh^2 a))`` so the admissibility
constraints hold strictly.  Standard errors come from the inverse observed
information (central-difference Hessian on the natural scale); the loading
covariance block propagates to the derived correlations by the delta method.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, special, stats

from .copula_density import (
    CDF_CLAMP,
    DependenceParams,
    EvalDiagnostics,
    QuadratureRule,
    VARIANCE_FLOOR,
    log_density_gaussian,
    log_density_t,
)
from .dependence import ThetaParams, check_admissible, rho_from_theta, rho_jacobian
from .errors import NonConvergenceError, NumericalError, UnidentifiableDataError
from .marginals import freq_cdf, sev_cdf, sev_logpdf
from .portfolio import PolicyHistory, Portfolio

__all__ = [
    "ModelParams",
    "FitOptions",
    "FitResult",
    "RhoInference",
    "PackedPortfolio",
    "pack_portfolio",
    "neg_log_likelihood",
    "fit",
    "rho_inference",
    "history_log_density",
    "fit_marginals_independent",
    "VARIANT_MASKS",
]

LOG_2PI = math.log(2.0 * math.pi)
_ETA_CAP = 30.0  # linear predictors are clipped to keep exp() finite

# Nested model variants: which of (theta1..theta4) are free.
VARIANT_MASKS = {
    "full": (True, True, True, True),
    "nested1": (True, True, False, False),  # within-year residual coupling off
    "nested2": (False, False, True, True),  # shared random effect off
    "nested3": (False, False, False, False),  # full independence
}


@dataclass
class ModelParams:
    """Everything the likelihood needs: regression coefficients, severity
    shape, loadings and the copula family."""

    beta: np.ndarray
    gamma: np.ndarray
    nu_sev: float
    theta: ThetaParams
    family: str = "gaussian"
    nu_df: float | None = None

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if self.nu_sev <= 0.0:
            raise ValueError("severity shape must be positive")
        if self.family not in ("gaussian", "t"):
            raise ValueError(f"unknown copula family {self.family!r}")
        if self.family == "t" and (self.nu_df is None or self.nu_df <= 0.0):
            raise ValueError("t family needs positive nu_df")

    def dependence(self) -> DependenceParams:
        return DependenceParams.from_theta(self.theta)

    def lambdas(self, history: PolicyHistory) -> np.ndarray:
        return np.exp(np.clip(history.freq_design @ self.beta, -_ETA_CAP, _ETA_CAP))

    def xis(self, history: PolicyHistory) -> np.ndarray:
        return np.exp(np.clip(history.sev_design @ self.gamma, -_ETA_CAP, _ETA_CAP))


@dataclass
class FitOptions:
    quad_nodes: int = 64
    mixing_nodes: int = 32
    max_iter: int = 300
    gtol_rel: float = 1e-5
    grad_rel_step: float = 1e-6
    hess_rel_step: float = 1e-4
    theta_mask: tuple[bool, bool, bool, bool] = (True, True, True, True)
    theta_init: float = 0.1
    workers: int = 1
    compute_cov: bool = True


@dataclass
class FitResult:
    params: ModelParams
    param_names: list[str]
    estimates: np.ndarray
    cov: np.ndarray
    std_errors: np.ndarray
    tstats: np.ndarray
    pvalues: np.ndarray
    loglik: float
    n_policies: int
    n_claims: int
    theta_mask: tuple[bool, bool, bool, bool]
    theta_positions: dict[int, int]  # loading index (0..3) -> row in estimates
    convergence: dict = field(default_factory=dict)

    def theta_cov(self) -> np.ndarray:
        """4x4 covariance of (theta1..theta4); fixed loadings get zero
        rows/columns."""
        out = np.zeros((4, 4))
        for i, ri in self.theta_positions.items():
            for j, rj in self.theta_positions.items():
                out[i, j] = self.cov[ri, rj]
        return out


@dataclass
class RhoInference:
    names: list[str]
    estimates: np.ndarray
    cov: np.ndarray
    std_errors: np.ndarray
    tstats: np.ndarray
    pvalues: np.ndarray


# ---------------------------------------------------------------------------
# Flat portfolio layout
# ---------------------------------------------------------------------------

@dataclass
class PackedPortfolio:
    policy_ids: list[str]
    counts: np.ndarray  # (Y,)
    freq_design: np.ndarray  # (Y, p)
    sev_design: np.ndarray  # (Y, q)
    policy_starts: np.ndarray  # (P + 1,) year-row offsets per policy
    claim_year: np.ndarray  # (C,) year-row index of each claim
    amounts: np.ndarray  # (C,)

    @property
    def n_policies(self) -> int:
        return len(self.policy_ids)

    @property
    def n_years(self) -> int:
        return self.counts.size

    @property
    def n_claims(self) -> int:
        return self.amounts.size


def pack_portfolio(portfolio: Portfolio) -> PackedPortfolio:
    ids, counts, xrows, wrows, claim_year, amounts = [], [], [], [], [], []
    starts = [0]
    row = 0
    for policy in portfolio:
        ids.append(policy.policy_id)
        for t, year in enumerate(policy.claims):
            counts.append(year.count)
            xrows.append(policy.freq_design[t])
            wrows.append(policy.sev_design[t])
            if year.count:
                claim_year.extend([row] * year.count)
                amounts.extend(year.severities.tolist())
            row += 1
        starts.append(row)
    return PackedPortfolio(
        policy_ids=ids,
        counts=np.asarray(counts, dtype=int),
        freq_design=np.asarray(xrows, dtype=float),
        sev_design=np.asarray(wrows, dtype=float),
        policy_starts=np.asarray(starts, dtype=int),
        claim_year=np.asarray(claim_year, dtype=int),
        amounts=np.asarray(amounts, dtype=float),
    )


# ---------------------------------------------------------------------------
# Vectorized portfolio log likelihood
# ---------------------------------------------------------------------------

def _clip_unit(u, diagnostics: EvalDiagnostics | None):
    clipped = np.clip(u, CDF_CLAMP, 1.0 - CDF_CLAMP)
    if diagnostics is not None:
        diagnostics.cdf_clamps += int(np.count_nonzero(clipped != u))
    return clipped


def _year_terms(packed: PackedPortfolio, params: ModelParams, diagnostics):
    """Per-year quantities that do not depend on the integration nodes."""
    lam = np.exp(np.clip(packed.freq_design @ params.beta, -_ETA_CAP, _ETA_CAP))
    xi_year = np.exp(np.clip(packed.sev_design @ params.gamma, -_ETA_CAP, _ETA_CAP))
    n = packed.counts
    u_hi = _clip_unit(freq_cdf(n, lam), diagnostics)
    # freq_cdf(-1) = 0 by convention; the n = 0 rows get -inf lower scores
    # later, so keep them out of the clamp diagnostics.
    u_lo = _clip_unit(np.where(n > 0, freq_cdf(n - 1, lam), 0.5), diagnostics)
    xi_claim = xi_year[packed.claim_year]
    u_y = _clip_unit(sev_cdf(packed.amounts, xi_claim, params.nu_sev), diagnostics)
    log_g = sev_logpdf(packed.amounts, xi_claim, params.nu_sev)
    return n, u_hi, u_lo, u_y, log_g


def _policy_loglik_gaussian(packed, params, quad, diagnostics):
    """(P,) log density per policy under the Gaussian factor copula."""
    dep = params.dependence()
    n, u_hi, u_lo, u_y, log_g = _year_terms(packed, params, diagnostics)
    n_years = packed.n_years

    c_hi = special.ndtri(u_hi)
    c_lo = np.where(n > 0, special.ndtri(u_lo), -np.inf)
    q = special.ndtri(u_y)

    s1 = np.bincount(packed.claim_year, weights=q, minlength=n_years)
    s2 = np.bincount(packed.claim_year, weights=q * q, minlength=n_years)

    t1, t2 = dep.theta.theta1, dep.theta.theta2
    a, b, c34 = dep.resid_var, dep.shared_var, dep.cross_load
    denom = a + n * b
    nf = n.astype(float)

    var = 1.0 - t1 * t1 - nf * c34 * c34 / denom
    floors = int(np.count_nonzero(var < VARIANCE_FLOOR))
    if floors and diagnostics is not None:
        diagnostics.variance_floors += floors
    sig = np.sqrt(np.maximum(var, VARIANCE_FLOOR))

    r = quad.nodes[None, :]  # (1, K)
    col = lambda v: v[:, None]  # noqa: E731 - (Y,) -> (Y, 1)

    dev_sum = col(s1) - col(nf) * t2 * r
    dev_sq = col(s2) - 2.0 * t2 * r * col(s1) + col(nf) * (t2 * r) ** 2
    quad_form = dev_sq / a - col(b / (a * denom)) * dev_sum**2
    logdet = col((nf - 1.0) * math.log(a) + np.log(denom))
    sev_lp = np.where(col(n > 0), -0.5 * (col(nf) * LOG_2PI + logdet + quad_form), 0.0)

    mu = t1 * r + c34 * dev_sum / col(denom)
    prob = special.ndtr((col(c_hi) - mu) / col(sig)) - special.ndtr(
        (col(c_lo) - mu) / col(sig)
    )
    with np.errstate(divide="ignore"):
        year_lp = sev_lp + np.log(np.clip(prob, 0.0, 1.0))

    policy_lp = np.add.reduceat(year_lp, packed.policy_starts[:-1], axis=0)
    ll = special.logsumexp(policy_lp + quad.log_weights[None, :], axis=1)
    # Score change-of-variable terms are node-independent; add them per policy
    # so non-finite densities can be attributed to a policy id.
    per_claim = log_g + 0.5 * q * q + 0.5 * LOG_2PI
    year_of_policy = np.repeat(np.arange(packed.n_policies), np.diff(packed.policy_starts))
    claim_policy = year_of_policy[packed.claim_year]
    ll += np.bincount(claim_policy, weights=per_claim, minlength=packed.n_policies)
    return ll


def _policy_loglik_t(packed, params, quad, mixing, diagnostics):
    """(P,) log density per policy under the t copula."""
    dep = params.dependence()
    nu_df = params.nu_df
    n, u_hi, u_lo, u_y, log_g = _year_terms(packed, params, diagnostics)
    n_years = packed.n_years

    c_hi = stats.t.ppf(u_hi, df=nu_df)
    c_lo = np.where(n > 0, stats.t.ppf(u_lo, df=nu_df), -np.inf)
    q = stats.t.ppf(u_y, df=nu_df)
    per_claim = log_g - stats.t.logpdf(q, df=nu_df)

    s1 = np.bincount(packed.claim_year, weights=q, minlength=n_years)
    s2 = np.bincount(packed.claim_year, weights=q * q, minlength=n_years)

    t1, t2 = dep.theta.theta1, dep.theta.theta2
    a, b, c34 = dep.resid_var, dep.shared_var, dep.cross_load
    denom = a + n * b
    nf = n.astype(float)
    var = 1.0 - t1 * t1 - nf * c34 * c34 / denom
    floors = int(np.count_nonzero(var < VARIANCE_FLOOR))
    if floors and diagnostics is not None:
        diagnostics.variance_floors += floors
    base_sig = np.sqrt(np.maximum(var, VARIANCE_FLOOR))

    col = lambda v: v[:, None]  # noqa: E731
    r = quad.nodes[None, :]
    stack = np.empty((packed.n_policies, quad.nodes.size, mixing.nodes.size))
    for m, (w, logw_m) in enumerate(zip(mixing.nodes, mixing.log_weights)):
        rw = r / math.sqrt(w)
        dev_sum = col(s1) - col(nf) * t2 * rw
        dev_sq = col(s2) - 2.0 * t2 * rw * col(s1) + col(nf) * (t2 * rw) ** 2
        quad_form = dev_sq / a - col(b / (a * denom)) * dev_sum**2
        logdet = col((nf - 1.0) * math.log(a) + np.log(denom)) - col(nf) * math.log(w)
        sev_lp = np.where(
            col(n > 0), -0.5 * (col(nf) * LOG_2PI + logdet + w * quad_form), 0.0
        )
        mu = t1 * rw + c34 * dev_sum / col(denom)
        sig = col(base_sig) / math.sqrt(w)
        prob = special.ndtr((col(c_hi) - mu) / sig) - special.ndtr(
            (col(c_lo) - mu) / sig
        )
        with np.errstate(divide="ignore"):
            year_lp = sev_lp + np.log(np.clip(prob, 0.0, 1.0))
        stack[:, :, m] = np.add.reduceat(year_lp, packed.policy_starts[:-1], axis=0)

    flat = (
        stack
        + quad.log_weights[None, :, None]
        + mixing.log_weights[None, None, :]
    ).reshape(packed.n_policies, -1)
    ll = special.logsumexp(flat, axis=1)
    year_of_policy = np.repeat(np.arange(packed.n_policies), np.diff(packed.policy_starts))
    claim_policy = year_of_policy[packed.claim_year]
    ll += np.bincount(claim_policy, weights=per_claim, minlength=packed.n_policies)
    return ll


def _policy_logliks(packed, params, options: FitOptions, diagnostics=None):
    quad = QuadratureRule.gauss_hermite(options.quad_nodes)
    if params.family == "t":
        mixing = QuadratureRule.chi_square_mixing(params.nu_df, options.mixing_nodes)
        evaluate = lambda chunk: _policy_loglik_t(chunk, params, quad, mixing, diagnostics)  # noqa: E731
    else:
        evaluate = lambda chunk: _policy_loglik_gaussian(chunk, params, quad, diagnostics)  # noqa: E731
    if options.workers <= 1 or packed.n_policies < 2 * options.workers:
        return evaluate(packed)
    chunks = _split_packed(packed, options.workers)
    with ThreadPoolExecutor(max_workers=options.workers) as pool:
        parts = list(pool.map(evaluate, chunks))
    return np.concatenate(parts)  # fixed chunk order: deterministic reduction


def _split_packed(packed: PackedPortfolio, n_chunks: int) -> list[PackedPortfolio]:
    bounds = np.linspace(0, packed.n_policies, n_chunks + 1, dtype=int)
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        ylo, yhi = packed.policy_starts[lo], packed.policy_starts[hi]
        claim_sel = (packed.claim_year >= ylo) & (packed.claim_year < yhi)
        out.append(
            PackedPortfolio(
                policy_ids=packed.policy_ids[lo:hi],
                counts=packed.counts[ylo:yhi],
                freq_design=packed.freq_design[ylo:yhi],
                sev_design=packed.sev_design[ylo:yhi],
                policy_starts=packed.policy_starts[lo : hi + 1] - ylo,
                claim_year=packed.claim_year[claim_sel] - ylo,
                amounts=packed.amounts[claim_sel],
            )
        )
    return out


def neg_log_likelihood(
    params: ModelParams,
    data: Portfolio | PackedPortfolio,
    options: FitOptions | None = None,
    diagnostics: EvalDiagnostics | None = None,
) -> float:
    """Negative portfolio log likelihood; raises NumericalError naming the
    offending policy if any per-policy density is non-finite."""
    options = options or FitOptions()
    packed = data if isinstance(data, PackedPortfolio) else pack_portfolio(data)
    ll = _policy_logliks(packed, params, options, diagnostics)
    bad = ~np.isfinite(ll)
    if np.any(bad):
        ids = [packed.policy_ids[i] for i in np.flatnonzero(bad)[:5]]
        raise NumericalError(f"non-finite log density for policies {ids}")
    return -float(ll.sum())


def history_log_density(
    history: PolicyHistory,
    params: ModelParams,
    quad_nodes: int = 64,
    mixing_nodes: int = 32,
    diagnostics: EvalDiagnostics | None = None,
) -> float:
    """Log density of a single history under ``params`` (family dispatch)."""
    quad = QuadratureRule.gauss_hermite(quad_nodes)
    dep = params.dependence()
    lams = params.lambdas(history)
    xis = params.xis(history)
    if params.family == "t":
        mixing = QuadratureRule.chi_square_mixing(params.nu_df, mixing_nodes)
        return log_density_t(
            history, dep, params.nu_df, lams, xis, params.nu_sev, quad, mixing, diagnostics
        )
    return log_density_gaussian(
        history, dep, lams, xis, params.nu_sev, quad, diagnostics
    )


# ---------------------------------------------------------------------------
# Unconstrained reparameterization
# ---------------------------------------------------------------------------

def _theta_to_free(theta: ThetaParams, mask) -> np.ndarray:
    vals = theta.as_array()
    free = []
    for first, second in ((0, 2), (1, 3)):
        if mask[first]:
            free.append(math.atanh(vals[first]))
        if mask[second]:
            shrink = math.sqrt(1.0 - vals[first] ** 2) if mask[first] else 1.0
            free.append(math.atanh(vals[second] / shrink))
    return np.asarray(free)


def _theta_from_free(free: np.ndarray, mask) -> ThetaParams:
    vals = [0.0, 0.0, 0.0, 0.0]
    pos = 0
    for first, second in ((0, 2), (1, 3)):
        shrink = 1.0
        if mask[first]:
            vals[first] = math.tanh(free[pos])
            shrink = math.sqrt(1.0 - vals[first] ** 2)
            pos += 1
        if mask[second]:
            vals[second] = math.tanh(free[pos]) * shrink
            pos += 1
    return ThetaParams(*vals)


def _pack_free(params: ModelParams, mask) -> np.ndarray:
    return np.concatenate(
        [params.beta, params.gamma, [math.log(params.nu_sev)], _theta_to_free(params.theta, mask)]
    )


def _unpack_free(x: np.ndarray, template: ModelParams, mask) -> ModelParams:
    p, q = template.beta.size, template.gamma.size
    return replace(
        template,
        beta=x[:p].copy(),
        gamma=x[p : p + q].copy(),
        nu_sev=math.exp(float(np.clip(x[p + q], -20.0, 20.0))),
        theta=_theta_from_free(x[p + q + 1 :], mask),
    )


def _natural_vector(params: ModelParams, mask) -> tuple[np.ndarray, list[str], dict[int, int]]:
    names = [f"freq:{i}" for i in range(params.beta.size)]
    names += [f"sev:{i}" for i in range(params.gamma.size)]
    names += ["nu_sev"]
    vec = list(params.beta) + list(params.gamma) + [params.nu_sev]
    theta_positions = {}
    for i, free in enumerate(mask):
        if free:
            theta_positions[i] = len(vec)
            vec.append(params.theta.as_array()[i])
            names.append(f"theta{i + 1}")
    return np.asarray(vec), names, theta_positions


def _params_from_natural(v: np.ndarray, template: ModelParams, mask) -> ModelParams:
    p, q = template.beta.size, template.gamma.size
    theta = list(template.theta.as_array())
    pos = p + q + 1
    for i, free in enumerate(mask):
        if free:
            theta[i] = float(v[pos])
            pos += 1
    return replace(
        template,
        beta=v[:p].copy(),
        gamma=v[p : p + q].copy(),
        nu_sev=float(v[p + q]),
        theta=ThetaParams(*theta),
    )


def _central_gradient(fun, x: np.ndarray, rel_step: float) -> np.ndarray:
    grad = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return grad


def _central_hessian(fun, x: np.ndarray, rel_step: float) -> np.ndarray:
    dim = x.size
    h = rel_step * (1.0 + np.abs(x))
    hess = np.empty((dim, dim))
    f0 = fun(x)
    for i in range(dim):
        xp, xm = x.copy(), x.copy()
        xp[i] += h[i]
        xm[i] -= h[i]
        hess[i, i] = (fun(xp) - 2.0 * f0 + fun(xm)) / h[i] ** 2
    for i in range(dim):
        for j in range(i + 1, dim):
            xpp, xpm, xmp, xmm = x.copy(), x.copy(), x.copy(), x.copy()
            xpp[[i, j]] += [h[i], h[j]]
            xpm[i] += h[i]
            xpm[j] -= h[j]
            xmp[i] -= h[i]
            xmp[j] += h[j]
            xmm[[i, j]] -= [h[i], h[j]]
            hess[i, j] = hess[j, i] = (fun(xpp) - fun(xpm) - fun(xmp) + fun(xmm)) / (
                4.0 * h[i] * h[j]
            )
    return hess


# ---------------------------------------------------------------------------
# Marginal (independence) fits for initialization
# ---------------------------------------------------------------------------

def _fit_poisson_regression(design: np.ndarray, counts: np.ndarray) -> np.ndarray:
    def nll_jac(beta):
        eta = np.clip(design @ beta, -_ETA_CAP, _ETA_CAP)
        lam = np.exp(eta)
        return float(np.sum(lam - counts * eta)), design.T @ (lam - counts)

    beta0 = np.zeros(design.shape[1])
    beta0[0] = math.log(max(counts.mean(), 1e-8))
    res = optimize.minimize(nll_jac, beta0, jac=True, method="BFGS")
    return res.x


def _fit_weibull_regression(
    design: np.ndarray, amounts: np.ndarray
) -> tuple[np.ndarray, float]:
    def nll(x):
        gamma, log_nu = x[:-1], x[-1]
        nu = math.exp(float(np.clip(log_nu, -10.0, 10.0)))
        xi = np.exp(np.clip(design @ gamma, -_ETA_CAP, _ETA_CAP))
        return -float(np.sum(sev_logpdf(amounts, xi, nu)))

    x0 = np.zeros(design.shape[1] + 1)
    x0[0] = math.log(amounts.mean())
    res = optimize.minimize(nll, x0, method="Nelder-Mead" if design.shape[1] == 1 else "BFGS")
    if not np.isfinite(res.fun):
        raise NumericalError("severity marginal fit failed")
    return res.x[:-1], math.exp(float(res.x[-1]))


def fit_marginals_independent(packed: PackedPortfolio) -> tuple[np.ndarray, np.ndarray, float]:
    """Count and severity regressions under full independence; used to
    initialize the joint fit and as its theta = 0 reference."""
    beta = _fit_poisson_regression(packed.freq_design, packed.counts.astype(float))
    gamma, nu_sev = _fit_weibull_regression(
        packed.sev_design[packed.claim_year], packed.amounts
    )
    return beta, gamma, nu_sev


# ---------------------------------------------------------------------------
# The fit
# ---------------------------------------------------------------------------

def fit(
    data: Portfolio | PackedPortfolio,
    init: ModelParams | None = None,
    options: FitOptions | None = None,
    family: str = "gaussian",
    nu_df: float | None = None,
) -> FitResult:
    """Joint maximum-likelihood fit; see module docstring for the scheme.

    ``family``/``nu_df`` select the copula when no explicit ``init`` template
    is given; ``nu_df`` stays fixed during optimization.
    """
    options = options or FitOptions()
    packed = data if isinstance(data, PackedPortfolio) else pack_portfolio(data)
    if packed.n_claims == 0:
        raise UnidentifiableDataError(
            "no claims in the data: severity parameters are unidentifiable"
        )
    mask = tuple(options.theta_mask)

    if init is None:
        beta, gamma, nu_sev = fit_marginals_independent(packed)
        theta = ThetaParams(*(options.theta_init if free else 0.0 for free in mask))
        init = ModelParams(beta, gamma, nu_sev, theta, family=family, nu_df=nu_df)
    elif not check_admissible(init.theta):
        raise ValueError("initial loadings are inadmissible")

    diagnostics = EvalDiagnostics()

    def objective(x):
        params = _unpack_free(x, init, mask)
        try:
            return neg_log_likelihood(params, packed, options)
        except NumericalError:
            return 1e12

    x0 = _pack_free(init, mask)
    f0 = objective(x0)
    if not np.isfinite(f0):
        raise NumericalError("likelihood is non-finite at the starting point")
    gtol = options.gtol_rel * (1.0 + abs(f0))

    res = optimize.minimize(
        objective,
        x0,
        method="BFGS",
        jac=lambda x: _central_gradient(objective, x, options.grad_rel_step),
        options={"gtol": gtol, "maxiter": options.max_iter},
    )
    grad_norm = float(np.max(np.abs(res.jac)))
    if not res.success and grad_norm > 10.0 * gtol:
        raise NonConvergenceError(
            f"optimizer stopped without convergence: {res.message} "
            f"(|grad|={grad_norm:.3g}, tol={gtol:.3g})"
        )

    params_hat = _unpack_free(res.x, init, mask)
    loglik = -neg_log_likelihood(params_hat, packed, options, diagnostics)
    vec, names, theta_positions = _natural_vector(params_hat, mask)

    boundary = [
        f"theta{i + 1}"
        for i, free in enumerate(mask)
        if free and abs(params_hat.theta.as_array()[i]) > 0.999
    ]
    if boundary:
        warnings.warn(f"loadings near the admissibility boundary: {boundary}")

    if options.compute_cov:
        def natural_nll(v):
            try:
                candidate = _params_from_natural(v, params_hat, mask)
                if candidate.nu_sev <= 0 or not check_admissible(candidate.theta):
                    return 1e12
                return neg_log_likelihood(candidate, packed, options)
            except NumericalError:
                return 1e12

        hess = _central_hessian(natural_nll, vec, options.hess_rel_step)
        cov = _covariance_from_information(hess)
    else:
        cov = np.full((vec.size, vec.size), np.nan)

    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstats = np.where(se > 0, vec / se, np.where(vec == 0, 0.0, np.inf))
    pvalues = 2.0 * special.ndtr(-np.abs(tstats))

    return FitResult(
        params=params_hat,
        param_names=names,
        estimates=vec,
        cov=cov,
        std_errors=se,
        tstats=tstats,
        pvalues=pvalues,
        loglik=loglik,
        n_policies=packed.n_policies,
        n_claims=packed.n_claims,
        theta_mask=mask,
        theta_positions=theta_positions,
        convergence={
            "iterations": int(res.nit),
            "n_evaluations": int(res.nfev),
            "grad_inf_norm": grad_norm,
            "gtol": gtol,
            "success": bool(res.success),
            "message": str(res.message),
            "cdf_clamps": diagnostics.cdf_clamps,
            "variance_floors": diagnostics.variance_floors,
            "boundary_flags": boundary,
        },
    )


def _covariance_from_information(hess: np.ndarray) -> np.ndarray:
    """Invert the observed information, flooring eigenvalues if needed."""
    hess = 0.5 * (hess + hess.T)
    eigvals, eigvecs = np.linalg.eigh(hess)
    if np.any(eigvals <= 0.0):
        warnings.warn(
            "observed information not positive definite; eigenvalues floored"
        )
        eigvals = np.maximum(eigvals, 1e-10)
    return (eigvecs / eigvals) @ eigvecs.T


def rho_inference(fit_result: FitResult) -> RhoInference:
    """Estimates and delta-method standard errors of the five correlations."""
    theta = fit_result.params.theta
    rho_hat = rho_from_theta(theta).as_array()
    jac = rho_jacobian(theta)
    cov = jac @ fit_result.theta_cov() @ jac.T
    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tstats = np.where(se > 0, rho_hat / se, np.where(rho_hat == 0, 0.0, np.inf))
    pvalues = 2.0 * special.ndtr(-np.abs(tstats))
    return RhoInference(
        names=[f"rho{i}" for i in range(1, 6)],
        estimates=rho_hat,
        cov=cov,
        std_errors=se,
        tstats=tstats,
        pvalues=pvalues,
    )
