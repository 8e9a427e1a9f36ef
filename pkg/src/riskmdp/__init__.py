"""Central-limit risk evaluation and SPSA/SF policy improvement for finite MDPs."""

__version__ = "0.1.0"

from .chain import (
    ChainSolution,
    analyze_chain,
    asymptotic_variance,
    asymptotic_variance_series,
    ergodicity_coefficient,
    solve_poisson,
    stationary_distribution,
    varrho,
)
from .edgeworth import EdgeworthCdf, RiskSpec, evaluate_risk, mean_variance, var_quantile
from .estimation import (
    EstimationCertificate,
    TransitionCounts,
    choose_n2,
    estimate_kernel,
    estimate_solution,
    evaluate_estimated,
    mean_variance_bound,
    power_stationary,
)
from .gradient import ImprovementConfig, improve, project, sf_gradient, spsa_gradient
from .mdp import InducedChain, SoftmaxPolicy, TabularMdp, check_ergodicity, induce_chain
from .montecarlo import empirical_cumulants, empirical_risk, simulate

__all__ = [
    "ChainSolution",
    "EdgeworthCdf",
    "EstimationCertificate",
    "ImprovementConfig",
    "InducedChain",
    "RiskSpec",
    "SoftmaxPolicy",
    "TabularMdp",
    "TransitionCounts",
    "analyze_chain",
    "asymptotic_variance",
    "asymptotic_variance_series",
    "check_ergodicity",
    "choose_n2",
    "empirical_cumulants",
    "empirical_risk",
    "ergodicity_coefficient",
    "estimate_kernel",
    "estimate_solution",
    "evaluate_estimated",
    "evaluate_risk",
    "improve",
    "induce_chain",
    "mean_variance",
    "mean_variance_bound",
    "power_stationary",
    "project",
    "sf_gradient",
    "simulate",
    "solve_poisson",
    "spsa_gradient",
    "stationary_distribution",
    "var_quantile",
    "varrho",
]
