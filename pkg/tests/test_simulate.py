"""Two-factor latent simulator: determinism, marginal laws, and recovery of
the latent correlations."""

import numpy as np
import pytest
from scipy import special, stats

from multiclaim.dependence import ThetaParams, rho_from_theta
from multiclaim.marginals import freq_pmf, sev_cdf
from multiclaim.simulate import ScenarioConfig, simulate_policy, simulate_portfolio

XI0 = float(np.exp(8))


def scenario(theta, n_policies=1000, n_years=3, seed=0, **kw):
    return ScenarioConfig(
        n_policies=n_policies,
        n_years=n_years,
        lambda0=2.0,
        xi0=XI0,
        nu_sev=0.7,
        theta=ThetaParams(*theta),
        seed=seed,
        **kw,
    )


def test_fixed_seed_reproducible():
    cfg = scenario((0.3, 0.3, 0.5, 0.5), n_policies=50, seed=11)
    a = simulate_portfolio(cfg).portfolio
    b = simulate_portfolio(cfg).portfolio
    for pa, pb in zip(a, b):
        assert pa.policy_id == pb.policy_id
        for ca, cb in zip(pa.claims, pb.claims):
            assert ca.count == cb.count
            np.testing.assert_array_equal(ca.severities, cb.severities)


def test_single_policy_matches_portfolio_stream():
    cfg = scenario((0.3, 0.3, 0.5, 0.5), n_policies=1, seed=4)
    via_portfolio = simulate_portfolio(cfg).portfolio.policies[0]
    rng = np.random.default_rng(np.random.SeedSequence((4, 0)))
    direct, _ = simulate_policy(cfg, "P0", rng)
    for ca, cb in zip(via_portfolio.claims, direct.claims):
        assert ca.count == cb.count
        np.testing.assert_array_equal(ca.severities, cb.severities)


def test_diagnostic_latents_do_not_change_observables():
    base = scenario((0.3, 0.3, 0.5, 0.5), n_policies=40, seed=8)
    with_diag = scenario((0.3, 0.3, 0.5, 0.5), n_policies=40, seed=8, keep_latents=True)
    a = simulate_portfolio(base).portfolio
    b = simulate_portfolio(with_diag, n_diag_severities=2).portfolio
    for pa, pb in zip(a, b):
        for ca, cb in zip(pa.claims, pb.claims):
            assert ca.count == cb.count
            np.testing.assert_array_equal(ca.severities, cb.severities)


def test_rejects_inadmissible_loadings():
    with pytest.raises(ValueError):
        scenario((0.8, 0.0, 0.7, 0.0))
    with pytest.raises(ValueError):
        ScenarioConfig(
            n_policies=1,
            n_years=1,
            lambda0=2.0,
            xi0=XI0,
            nu_sev=0.7,
            theta=ThetaParams(0.3, 0.3, 0.0, 0.0),
            family="t",
        )


def test_mean_count_and_count_distribution():
    cfg = scenario((0.3, 0.3, 0.5, 0.5), n_policies=5000, seed=21)
    pf = simulate_portfolio(cfg).portfolio
    counts = np.array([c.count for p in pf for c in p.claims])
    se = counts.std() / np.sqrt(counts.size)
    assert abs(counts.mean() - 2.0) < 3 * se
    # copula preserves the count margin: chi-square GOF at the 1% level
    cap = 9
    observed = np.bincount(np.minimum(counts, cap), minlength=cap + 1)
    expected = np.array(
        [freq_pmf(k, 2.0) for k in range(cap)] + [1 - sum(freq_pmf(k, 2.0) for k in range(cap))]
    ) * counts.size
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    assert chi2 < stats.chi2.ppf(0.99, df=cap)


def test_count_margin_preserved_under_t_family():
    cfg = scenario(
        (0.3, 0.3, 0.5, 0.5), n_policies=5000, seed=33, family="t", nu_df=4.0
    )
    pf = simulate_portfolio(cfg).portfolio
    counts = np.array([c.count for p in pf for c in p.claims])
    cap = 9
    observed = np.bincount(np.minimum(counts, cap), minlength=cap + 1)
    expected = np.array(
        [freq_pmf(k, 2.0) for k in range(cap)] + [1 - sum(freq_pmf(k, 2.0) for k in range(cap))]
    ) * counts.size
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    assert chi2 < stats.chi2.ppf(0.99, df=cap)


def test_independence_latent_correlations_vanish():
    cfg = scenario((0, 0, 0, 0), n_policies=4000, seed=2, keep_latents=True)
    sim = simulate_portfolio(cfg, n_diag_severities=1)
    a = np.array([l.count_latents for l in sim.latents])
    b = np.stack([l.diag_severity_latents[:, 0] for l in sim.latents])
    n = a.shape[0]
    bound = 3 / np.sqrt(n)
    assert abs(np.corrcoef(a[:, 0], b[:, 0])[0, 1]) < bound
    assert abs(np.corrcoef(a[:, 0], a[:, 1])[0, 1]) < bound
    assert abs(np.corrcoef(b[:, 0], b[:, 1])[0, 1]) < bound


def _fisher_z_ok(x, y, target, n_se=4.0):
    r = np.corrcoef(x, y)[0, 1]
    z = (np.arctanh(r) - np.arctanh(target)) * np.sqrt(x.size - 3)
    return abs(z) < n_se


def test_scenario_one_latent_correlation_recovery():
    # ~1e5 policy-years; unselected diagnostic severities avoid count-selection
    # bias in the severity pairs.
    cfg = scenario((0.3, 0.3, 0.5, 0.5), n_policies=34000, seed=7, keep_latents=True)
    sim = simulate_portfolio(cfg, n_diag_severities=2)
    a = np.array([l.count_latents for l in sim.latents])  # (P, 3)
    b = np.stack([l.diag_severity_latents for l in sim.latents])  # (P, 3, 2)
    rho = rho_from_theta(cfg.theta)

    # within-year count-severity and severity-severity
    assert _fisher_z_ok(
        np.concatenate([a[:, t] for t in range(3) for j in range(2)]),
        np.concatenate([b[:, t, j] for t in range(3) for j in range(2)]),
        rho.rho1,
    )
    assert _fisher_z_ok(
        np.concatenate([b[:, t, 0] for t in range(3)]),
        np.concatenate([b[:, t, 1] for t in range(3)]),
        rho.rho2,
    )
    cross = [(0, 1), (0, 2), (1, 2)]
    assert _fisher_z_ok(
        np.concatenate([a[:, t] for t, _ in cross]),
        np.concatenate([a[:, s] for _, s in cross]),
        rho.rho3,
    )
    assert _fisher_z_ok(
        np.concatenate([a[:, t] for t, s in cross for j in range(2)]),
        np.concatenate([b[:, s, j] for t, s in cross for j in range(2)]),
        rho.rho4,
    )
    assert _fisher_z_ok(
        np.concatenate([b[:, t, 0] for t, _ in cross]),
        np.concatenate([b[:, s, 1] for _, s in cross]),
        rho.rho5,
    )


def test_within_year_coupling_reduces_to_shared_factor():
    # theta3 = theta4 = 0: within-year count-severity correlation is exactly
    # theta1 * theta2.
    cfg = scenario((0.5, 0.4, 0.0, 0.0), n_policies=30000, seed=13, keep_latents=True)
    sim = simulate_portfolio(cfg, n_diag_severities=1)
    a = np.array([l.count_latents for l in sim.latents])
    b = np.stack([l.diag_severity_latents[:, 0] for l in sim.latents])
    assert _fisher_z_ok(
        np.concatenate([a[:, t] for t in range(3)]),
        np.concatenate([b[:, t] for t in range(3)]),
        0.5 * 0.4,
    )


def test_unloaded_shared_factor_kills_cross_year_dependence():
    cfg = scenario((0.0, 0.0, 0.5, 0.5), n_policies=20000, seed=17, keep_latents=True)
    sim = simulate_portfolio(cfg, n_diag_severities=1)
    a = np.array([l.count_latents for l in sim.latents])
    b = np.stack([l.diag_severity_latents[:, 0] for l in sim.latents])
    n = a.shape[0]
    bound = 4 / np.sqrt(n)
    assert abs(np.corrcoef(a[:, 0], a[:, 1])[0, 1]) < bound
    assert abs(np.corrcoef(a[:, 0], b[:, 1])[0, 1]) < bound
    assert abs(np.corrcoef(b[:, 0], b[:, 1])[0, 1]) < bound


def test_severity_margin_from_unselected_latents():
    cfg = scenario((0.3, 0.3, 0.5, 0.5), n_policies=17000, seed=29, keep_latents=True)
    sim = simulate_portfolio(cfg, n_diag_severities=2)
    scores = np.concatenate([l.diag_severity_latents.ravel() for l in sim.latents])
    u = special.ndtr(scores)
    from multiclaim.marginals import sev_quantile

    draws = sev_quantile(np.clip(u, 1e-15, 1 - 1e-15), XI0, 0.7)
    se = draws.std() / np.sqrt(draws.size)
    assert abs(draws.mean() - XI0) < 3 * se
    # KS against the severity law at the 1% level
    ks = stats.kstest(draws, lambda y: sev_cdf(y, XI0, 0.7))
    assert ks.statistic < 1.63 / np.sqrt(draws.size)


def test_observed_severities_are_count_selected():
    # With positive count-severity dependence the *observed* amounts sit above
    # the marginal mean; guards against "fixing" the selection away.
    cfg = scenario((0.3, 0.3, 0.5, 0.5), n_policies=12000, seed=41)
    pf = simulate_portfolio(cfg).portfolio
    amounts = np.concatenate([c.severities for p in pf for c in p.claims if c.count])
    se = amounts.std() / np.sqrt(amounts.size)
    assert amounts.mean() > XI0 + 10 * se
