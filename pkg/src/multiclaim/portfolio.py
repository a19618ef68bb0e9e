"""Core claim-history containers shared by the density, simulation,
estimation and I/O layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["YearClaim", "PolicyHistory", "Portfolio"]


@dataclass
class YearClaim:
    """One observation year: a claim count and that many claim amounts."""

    count: int
    severities: np.ndarray

    def __post_init__(self):
        self.severities = np.asarray(self.severities, dtype=float)
        if self.count < 0:
            raise ValueError("claim count must be non-negative")
        if self.severities.size != self.count:
            raise ValueError(
                f"year lists {self.severities.size} severities for count {self.count}"
            )
        if np.any(self.severities <= 0.0):
            raise ValueError("severities must be positive")


@dataclass
class PolicyHistory:
    """Multi-year record for one policyholder.

    ``freq_design`` / ``sev_design`` hold one design row per year (intercept
    included); ``years`` are the calendar labels, ascending.
    """

    policy_id: str
    claims: list[YearClaim]
    freq_design: np.ndarray
    sev_design: np.ndarray
    years: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.freq_design = np.atleast_2d(np.asarray(self.freq_design, dtype=float))
        self.sev_design = np.atleast_2d(np.asarray(self.sev_design, dtype=float))
        tau = len(self.claims)
        if tau == 0:
            raise ValueError(f"policy {self.policy_id}: needs at least one year")
        if self.freq_design.shape[0] != tau or self.sev_design.shape[0] != tau:
            raise ValueError(
                f"policy {self.policy_id}: design rows must match the number of years"
            )
        if not self.years:
            self.years = list(range(1, tau + 1))
        if not np.all(np.isfinite(self.freq_design)) or not np.all(
            np.isfinite(self.sev_design)
        ):
            raise ValueError(f"policy {self.policy_id}: covariates must be finite")

    @property
    def n_years(self) -> int:
        return len(self.claims)

    @property
    def counts(self) -> np.ndarray:
        return np.array([c.count for c in self.claims], dtype=int)


@dataclass
class Portfolio:
    policies: list[PolicyHistory]
    freq_columns: list[str] = field(default_factory=lambda: ["(Intercept)"])
    sev_columns: list[str] = field(default_factory=lambda: ["(Intercept)"])

    def __len__(self) -> int:
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    @property
    def n_claims(self) -> int:
        return int(sum(int(c.count) for p in self.policies for c in p.claims))
