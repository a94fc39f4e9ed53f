"""Mixed-model fitting by adaptive Gauss-Hermite quadrature.

The package approximates each group's intractable marginal likelihood
with a quadrature rule recentered at the group's joint-likelihood mode
and rescaled by its curvature, maximizes the resulting approximate
log-likelihood, and recommends how many quadrature points a given
dataset needs. Verification labs estimate the approximation's error
decay empirically against a brute-force integration oracle.
"""

from .data import (
    CsvSchema,
    DataFormatError,
    Group,
    GroupedDataset,
    load_kidney,
    read_csv,
    summary,
    write_csv,
)
from .families import (
    ModelSpec,
    ParameterMap,
    Parameters,
    RaneffFamily,
    ResponseFamily,
    default_parameters,
    raneff_logdensity,
    response_logdensity,
)
from .fit import FitResult, default_start, fit, vcov_from_hessian, wald_ci
from .inner import Adaptation, AdaptationError, adapt, group_joint_loglik
from .kadvisor import KRecommendation, max_groups_for_k, rate_exponent, recommend_k
from .marglik import (
    LoglikBreakdown,
    NodeEvaluationError,
    aq_group_loglik,
    gq_group_loglik,
    total_loglik,
)
from .quadrature import QuadratureRule, adapted_weight, hermite_rule, product_rule, rule_for
from .theorylab import (
    DivergenceReport,
    RateReport,
    SimStudyConfig,
    SimStudyReport,
    gq_divergence_demo,
    oracle_group_loglik,
    rate_check,
    simulate_group,
    simulate_panel_dataset,
    simulate_study,
)

__version__ = "0.1.0"

__all__ = [
    "Adaptation",
    "AdaptationError",
    "CsvSchema",
    "DataFormatError",
    "DivergenceReport",
    "FitResult",
    "Group",
    "GroupedDataset",
    "KRecommendation",
    "LoglikBreakdown",
    "ModelSpec",
    "NodeEvaluationError",
    "ParameterMap",
    "Parameters",
    "QuadratureRule",
    "RaneffFamily",
    "RateReport",
    "ResponseFamily",
    "SimStudyConfig",
    "SimStudyReport",
    "adapt",
    "adapted_weight",
    "aq_group_loglik",
    "default_parameters",
    "default_start",
    "fit",
    "gq_divergence_demo",
    "gq_group_loglik",
    "group_joint_loglik",
    "hermite_rule",
    "load_kidney",
    "max_groups_for_k",
    "oracle_group_loglik",
    "product_rule",
    "raneff_logdensity",
    "rate_check",
    "rate_exponent",
    "read_csv",
    "recommend_k",
    "response_logdensity",
    "rule_for",
    "simulate_group",
    "simulate_panel_dataset",
    "simulate_study",
    "summary",
    "total_loglik",
    "vcov_from_hessian",
    "wald_ci",
    "write_csv",
]
