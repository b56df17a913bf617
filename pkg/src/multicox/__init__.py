"""Multiplicative latent-component intensity models for replicated point
processes: log Lambda(t) = mu(t) + sum_k U_k phi_k(t) with independent
N(0, sigma_k^2) scores, fitted by penalized Monte Carlo maximum likelihood."""

from .basis import (
    BasisSystem,
    BSplineBasis,
    GaussianKernelBasis,
    GramMatrix,
    PenaltyMatrix,
    eval_basis,
    gram_matrix,
    make_bspline_basis,
    make_kernel_basis,
    penalty_matrix,
)
from .domain import ObservationDomain, QuadratureRule, build_quadrature, contains
from .estimation import (
    CVEntry,
    CVTable,
    FitConfig,
    FitResult,
    canonicalize,
    cross_validate,
    fit,
    initialize,
)
from .exceptions import EstimationError, ModelFileError, NumericError
from .likelihood import (
    MCDraws,
    ModelParams,
    cond_loglik,
    marginal_loglik,
    marginal_loglik_with_se,
    objective_gradient,
    penalized_objective,
    per_replicate_logliks,
    prior_loglik,
)
from .modelio import (
    EventFormat,
    FitMetadata,
    LoadedEvents,
    LoadedModel,
    load_events,
    load_model,
    save_model,
)
from .process import (
    Dataset,
    FunctionalEstimate,
    PointPattern,
    expect_functional,
    intensity_at,
    simulate_poisson,
    simulate_replicates,
)
from .scores import (
    ComponentCurves,
    PosteriorScores,
    ScoreSummary,
    component_curves,
    posterior_scores,
    score_summary,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSystem",
    "BSplineBasis",
    "GaussianKernelBasis",
    "GramMatrix",
    "PenaltyMatrix",
    "eval_basis",
    "gram_matrix",
    "make_bspline_basis",
    "make_kernel_basis",
    "penalty_matrix",
    "ObservationDomain",
    "QuadratureRule",
    "build_quadrature",
    "contains",
    "CVEntry",
    "CVTable",
    "FitConfig",
    "FitResult",
    "canonicalize",
    "cross_validate",
    "fit",
    "initialize",
    "EstimationError",
    "ModelFileError",
    "NumericError",
    "MCDraws",
    "ModelParams",
    "cond_loglik",
    "marginal_loglik",
    "marginal_loglik_with_se",
    "objective_gradient",
    "penalized_objective",
    "per_replicate_logliks",
    "prior_loglik",
    "EventFormat",
    "FitMetadata",
    "LoadedEvents",
    "LoadedModel",
    "load_events",
    "load_model",
    "save_model",
    "Dataset",
    "FunctionalEstimate",
    "PointPattern",
    "expect_functional",
    "intensity_at",
    "simulate_poisson",
    "simulate_replicates",
    "ComponentCurves",
    "PosteriorScores",
    "ScoreSummary",
    "component_curves",
    "posterior_scores",
    "score_summary",
]
