"""Posterior component scores and interpretive curve/surface evaluation.

Scores are self-normalized importance-sampling posterior means E[U | X = x]
with the N(0, diag sigma^2) prior as proposal, sharing the draw mechanism of
the fit. Curves follow the multiplicative decomposition: baseline exp(mu),
components exp(phi_k), and the envelope pair exp(mu +/- 2 sigma_k phi_k)
showing the effect of moving along one component.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .basis import BasisSystem, eval_basis
from .domain import build_quadrature
from .likelihood import MCDraws, ModelParams, _cond_matrix, _Workspace
from .process import Dataset, PointPattern

if TYPE_CHECKING:
    from .estimation import FitResult

_MIN_EFFECTIVE_SAMPLES = 10.0


@dataclass(frozen=True)
class PosteriorScores:
    """Posterior mean scores with per-coordinate MC standard errors.

    low_ess flags an effective sample size below 10, where the importance
    weights are dominated by a few draws and u/se are unreliable.
    """

    u: np.ndarray
    se: np.ndarray
    effective_sample_size: float
    low_ess: bool


def posterior_scores_dataset(
    dataset: Dataset, theta: ModelParams, draws: MCDraws
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized posterior means for every replicate: (u (n,p), se (n,p), ess (n,))."""
    if draws.p != theta.p:
        raise ValueError(f"draws have p={draws.p} but theta has p={theta.p}")
    ws = _Workspace.build(dataset, theta.basis, theta.quad)
    U = draws.z * theta.sigma[None, :]
    cond, _ = _cond_matrix(ws, theta.c0, theta.C, U)
    W = np.exp(cond - cond.max(axis=1, keepdims=True))
    W /= W.sum(axis=1, keepdims=True)  # (n, S)
    u_hat = np.einsum("ns,sp->np", W, U)
    dev = U[None, :, :] - u_hat[:, None, :]  # (n, S, p)
    se = np.sqrt(np.einsum("ns,nsp->np", W**2, dev**2))
    ess = 1.0 / np.einsum("ns,ns->n", W, W)
    return u_hat, se, ess


def posterior_scores(pattern: PointPattern, theta: ModelParams, draws: MCDraws) -> PosteriorScores:
    """Posterior mean scores for one replicate, with MC standard errors."""
    if not theta.is_canonical():
        raise ValueError("posterior_scores requires canonical parameters (run canonicalize)")
    dataset = Dataset(domain=theta.basis.domain, patterns=[pattern])
    u, se, ess = posterior_scores_dataset(dataset, theta, draws)
    ess0 = float(ess[0])
    return PosteriorScores(u=u[0], se=se[0], effective_sample_size=ess0, low_ess=ess0 < _MIN_EFFECTIVE_SAMPLES)


@dataclass(frozen=True)
class ComponentCurves:
    """Grid evaluation of the fitted decomposition.

    grid: (N,) points in 1D, (N, 2) in 2D. phi/xi/lam_plus/lam_minus have one
    column per component; lam_plus * lam_minus = lambda0^2 pointwise by
    construction.
    """

    grid: np.ndarray
    lambda0: np.ndarray
    phi: np.ndarray
    xi: np.ndarray
    lam_plus: np.ndarray
    lam_minus: np.ndarray
    multiplier: float


def component_curves(
    theta: ModelParams,
    basis: Optional[BasisSystem] = None,
    grid_resolution: int = 200,
    multiplier: float = 2.0,
) -> ComponentCurves:
    """Evaluate lambda0, phi_k, xi_k and the +/- multiplier*sigma_k envelopes
    on a uniform grid (1D) or the masked cell-center grid (2D)."""
    if not theta.is_canonical():
        raise ValueError("component_curves requires canonical parameters (run canonicalize)")
    basis = basis if basis is not None else theta.basis
    domain = basis.domain
    if domain.kind == "interval":
        grid = np.linspace(domain.a, domain.b, grid_resolution)
    else:
        grid = build_quadrature(domain, grid_resolution).nodes
    b = eval_basis(basis, grid)
    mu = b @ theta.c0
    phi = b @ theta.C  # (N, p)
    spread = multiplier * theta.sigma[None, :] * phi
    return ComponentCurves(
        grid=grid,
        lambda0=np.exp(mu),
        phi=phi,
        xi=np.exp(phi),
        lam_plus=np.exp(mu[:, None] + spread),
        lam_minus=np.exp(mu[:, None] - spread),
        multiplier=multiplier,
    )


@dataclass(frozen=True)
class ScoreSummary:
    """Per-replicate score table plus the size diagnostic corr(u_1, count)."""

    replicate_ids: list[str]
    counts: np.ndarray
    scores: np.ndarray
    corr_u1_count: Optional[float]


def summarize_scores(dataset: Dataset, scores: np.ndarray) -> ScoreSummary:
    counts = dataset.counts
    corr = None
    if scores.shape[1] >= 1 and len(counts) > 1 and scores[:, 0].std() > 0 and counts.std() > 0:
        corr = float(np.corrcoef(scores[:, 0], counts)[0, 1])
    return ScoreSummary(
        replicate_ids=[pat.replicate_id for pat in dataset.patterns],
        counts=counts,
        scores=scores,
        corr_u1_count=corr,
    )


def score_summary(fit: "FitResult", dataset: Dataset) -> ScoreSummary:
    """Tabulate fitted scores next to event counts; correlation of the first
    score with the counts diagnoses a size component."""
    return summarize_scores(dataset, fit.scores)
