"""Multi-year microlevel collective risk model with factor-copula dependence."""

from .dependence import (
    RhoParams,
    StructuredCorrMatrix,
    ThetaParams,
    build_augmented_sigma,
    build_sigma,
    check_admissible,
    is_positive_definite,
    rho_from_theta,
    rho_jacobian,
    schur_complement_factor,
)
from .marginals import (
    FrequencySpec,
    MarginalSpec,
    SeveritySpec,
    freq_cdf,
    freq_inverse_cdf,
    freq_pmf,
    sev_cdf,
    sev_pdf,
    sev_quantile,
)
from .copula_density import (
    DependenceParams,
    EvalDiagnostics,
    QuadratureRule,
    cond_freq_prob,
    cond_sev_logdensity,
    log_density_gaussian,
    log_density_t,
    oracle_density,
)
from .portfolio import PolicyHistory, Portfolio, YearClaim

__version__ = "0.1.0"
