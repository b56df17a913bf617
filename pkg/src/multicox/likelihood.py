"""Conditional, prior, and Monte Carlo marginal log-densities, and the
penalized sample objective with its analytic gradient.

The marginal likelihood has no closed form; it is estimated by averaging
exp(conditional log-density) over fixed standard-normal draws, reparameterized
as u = sigma * z so the estimator stays smooth in theta (SAA). Draws are
antithetic (z and -z both present), which makes the estimate exactly invariant
under a simultaneous sign flip of all component columns.

Reductions over the draw and replicate axes use np.einsum rather than BLAS:
multithreaded BLAS splits large inner dimensions nondeterministically, and
results here must be bit-identical across thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .basis import BasisSystem, GramMatrix, PenaltyMatrix, eval_basis
from .domain import QuadratureRule
from .exceptions import NumericError
from .process import Dataset, PointPattern

_MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class ModelParams:
    """Model coefficients plus the basis machinery needed to evaluate them.

    c0: (q,) mean coefficients; C: (q, p) component columns; sigma: (p,)
    score standard deviations. Canonical form (J-orthonormal columns, sigma
    descending, max-|entry| sign rule) is produced by estimation.canonicalize;
    intermediate parameters during optimization need not satisfy it.
    """

    c0: np.ndarray
    C: np.ndarray
    sigma: np.ndarray
    basis: BasisSystem
    gram: GramMatrix
    penalty: PenaltyMatrix
    quad: QuadratureRule

    def __post_init__(self):
        c0 = np.asarray(self.c0, dtype=float)
        C = np.asarray(self.C, dtype=float).reshape(len(c0), -1)
        sigma = np.asarray(self.sigma, dtype=float).reshape(-1)
        q = self.basis.q
        if c0.shape != (q,):
            raise ValueError(f"c0 must have length q={q}, got {c0.shape}")
        if C.shape[0] != q or C.shape[1] != len(sigma):
            raise ValueError(f"C shape {C.shape} inconsistent with q={q}, p={len(sigma)}")
        if (sigma <= 0).any():
            raise ValueError("sigma entries must be strictly positive")
        for arr, name in ((c0, "c0"), (C, "C"), (sigma, "sigma")):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} contains non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "c0", c0)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "sigma", sigma)

    @property
    def q(self) -> int:
        return len(self.c0)

    @property
    def p(self) -> int:
        return self.C.shape[1]

    def replace_coefficients(self, c0=None, C=None, sigma=None) -> "ModelParams":
        return ModelParams(
            c0=self.c0 if c0 is None else c0,
            C=self.C if C is None else C,
            sigma=self.sigma if sigma is None else sigma,
            basis=self.basis,
            gram=self.gram,
            penalty=self.penalty,
            quad=self.quad,
        )

    def is_canonical(self, tol: float = 1e-8) -> bool:
        j = self.gram.values
        if self.p == 0:
            return True
        ortho = np.abs(self.C.T @ j @ self.C - np.eye(self.p)).max() <= tol
        descending = bool((np.diff(self.sigma) <= tol).all())
        signs = all(self.C[np.argmax(np.abs(self.C[:, k])), k] > 0 for k in range(self.p))
        return ortho and descending and signs


@dataclass(frozen=True)
class MCDraws:
    """Fixed standard-normal draws (common random numbers), antithetic:
    row s + S/2 is the negation of row s. Regenerable bit-exactly from seed."""

    z: np.ndarray
    seed: object

    def __post_init__(self):
        self.z.setflags(write=False)

    @staticmethod
    def generate(p: int, S: int, seed) -> "MCDraws":
        if S < 2 or S % 2 != 0:
            raise ValueError("S must be an even integer >= 2 (antithetic pairing)")
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        half = rng.standard_normal((S // 2, p))
        return MCDraws(z=np.vstack([half, -half]), seed=seed)

    @property
    def S(self) -> int:
        return len(self.z)

    @property
    def p(self) -> int:
        return self.z.shape[1]


def prior_loglik(u: np.ndarray, sigma: np.ndarray) -> float:
    """log density of independent N(0, sigma_k^2) scores."""
    u = np.asarray(u, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if u.shape != sigma.shape:
        raise ValueError(f"u shape {u.shape} does not match sigma shape {sigma.shape}")
    if (sigma <= 0).any():
        raise ValueError("sigma entries must be strictly positive")
    return float(np.sum(-0.5 * np.log(2.0 * np.pi * sigma**2) - u**2 / (2.0 * sigma**2)))


class _Workspace:
    """Precomputed evaluation matrices for one (dataset, basis, quad) triple."""

    def __init__(self, A: np.ndarray, w: np.ndarray, sum_b: np.ndarray, counts: np.ndarray):
        self.A = A  # (#nodes, q) basis at quadrature nodes
        self.w = w  # (#nodes,)
        self.sum_b = sum_b  # (n, q), row i = sum_j beta(t_ij)
        self.counts = counts  # (n,)
        self.log_fact = gammaln(counts + 1.0)

    @staticmethod
    def build(dataset: Dataset, basis: BasisSystem, quad: QuadratureRule) -> "_Workspace":
        A = basis.evaluate(quad.nodes)
        sum_b = np.zeros((dataset.n, basis.q))
        for i, pat in enumerate(dataset.patterns):
            if pat.m:
                sum_b[i] = eval_basis(basis, pat.points).sum(axis=0)
        return _Workspace(A=A, w=quad.weights, sum_b=sum_b, counts=dataset.counts.astype(float))


def _guard_exponents(eta: np.ndarray) -> None:
    top = float(eta.max(initial=-np.inf))
    if not np.isfinite(eta).all() or top > _MAX_EXPONENT:
        raise NumericError(f"exp overflow in intensity integrand: max exponent {top:.6g}")


def _cond_matrix(ws: _Workspace, c0, C, U) -> tuple[np.ndarray, np.ndarray]:
    """Conditional log-densities for every (replicate, draw) pair.

    Returns (cond (n, S), E (#nodes, S)) with E = exp of the node exponents,
    shared by the gradient. U is the (S, p) matrix of u draws.
    """
    eta = (ws.A @ c0)[:, None] + (ws.A @ C) @ U.T  # (#nodes, S)
    _guard_exponents(eta)
    E = np.exp(eta)
    integrals = np.einsum("n,ns->s", ws.w, E)
    cond = (
        -integrals[None, :]
        + (ws.sum_b @ c0)[:, None]
        + (ws.sum_b @ C) @ U.T
        - ws.log_fact[:, None]
    )
    return cond, E


def cond_loglik(pattern: PointPattern, u: np.ndarray, theta: ModelParams) -> float:
    """log f(x | u): -integral of lambda_u over B + sum_j log lambda_u(t_j) - log m!."""
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.shape != (theta.p,):
        raise ValueError(f"u must have length p={theta.p}, got {u.shape}")
    coef = theta.c0 + theta.C @ u
    eta_nodes = theta.basis.evaluate(theta.quad.nodes) @ coef
    _guard_exponents(eta_nodes)
    integral = float(theta.quad.weights @ np.exp(eta_nodes))
    point_term = 0.0
    if pattern.m:
        point_term = float(eval_basis(theta.basis, pattern.points).sum(axis=0) @ coef)
    return -integral + point_term - float(gammaln(pattern.m + 1.0))


class MarginalEstimate(NamedTuple):
    value: float
    se: float


def marginal_loglik(pattern: PointPattern, theta: ModelParams, draws: MCDraws) -> float:
    """Monte Carlo log marginal density log f(x; theta), log-sum-exp stabilized."""
    return marginal_loglik_with_se(pattern, theta, draws).value


def marginal_loglik_with_se(pattern: PointPattern, theta: ModelParams, draws: MCDraws) -> MarginalEstimate:
    """Marginal log-likelihood and its MC standard error (computed over
    antithetic pair averages, which are the independent units)."""
    if draws.p != theta.p:
        raise ValueError(f"draws have p={draws.p} but theta has p={theta.p}")
    if theta.p == 0:
        # no latent variables: the marginal is the conditional, exactly
        return MarginalEstimate(value=cond_loglik(pattern, np.zeros(0), theta), se=0.0)
    ws = _Workspace.build(Dataset(domain=theta.basis.domain, patterns=[pattern]), theta.basis, theta.quad)
    U = draws.z * theta.sigma[None, :]
    cond, _ = _cond_matrix(ws, theta.c0, theta.C, U)
    a = cond[0]
    value = float(logsumexp(a) - np.log(draws.S))
    if not np.isfinite(value):
        raise NumericError("marginal likelihood underflowed for every draw")
    amax = a.max()
    half = draws.S // 2
    pair_means = 0.5 * (np.exp(a[:half] - amax) + np.exp(a[half:] - amax))
    mean = pair_means.mean()
    se = float(pair_means.std(ddof=1) / (np.sqrt(half) * mean)) if half > 1 else 0.0
    return MarginalEstimate(value=value, se=se)


def _loglik_terms(ws: _Workspace, c0, C, sigma, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-replicate marginal log-likelihoods plus (cond, E) for reuse."""
    U = z * sigma[None, :]
    cond, E = _cond_matrix(ws, c0, C, U)
    per_rep = logsumexp(cond, axis=1) - np.log(len(z))
    if not np.isfinite(per_rep).all():
        raise NumericError("marginal likelihood underflowed for every draw of a replicate")
    return per_rep, cond, E


def per_replicate_logliks(dataset: Dataset, theta: ModelParams, draws: MCDraws) -> np.ndarray:
    """Vector of marginal log-likelihoods, one per replicate, under common draws."""
    ws = _Workspace.build(dataset, theta.basis, theta.quad)
    per_rep, _, _ = _loglik_terms(ws, theta.c0, theta.C, theta.sigma, draws.z)
    return per_rep


def penalized_objective(
    dataset: Dataset,
    theta: ModelParams,
    nu1: float,
    nu2: float,
    draws: MCDraws,
) -> float:
    """(1/n) sum_i log f(x_i; theta) - nu1 c0'Omega c0 - nu2 sum_k c_k'Omega c_k."""
    if nu1 < 0 or nu2 < 0:
        raise ValueError("smoothing parameters must be nonnegative")
    ws = _Workspace.build(dataset, theta.basis, theta.quad)
    per_rep, _, _ = _loglik_terms(ws, theta.c0, theta.C, theta.sigma, draws.z)
    om = theta.penalty.values
    pen = nu1 * float(theta.c0 @ om @ theta.c0) + nu2 * float(np.einsum("qk,qr,rk->", theta.C, om, theta.C))
    return float(per_rep.mean()) - pen


class ObjectiveGradient(NamedTuple):
    c0: np.ndarray
    C: np.ndarray
    log_sigma: np.ndarray


def _likelihood_gradient(
    ws: _Workspace, c0, C, sigma, z, cond: np.ndarray, E: np.ndarray
) -> ObjectiveGradient:
    """Gradient of (1/n) sum_i log f(x_i) w.r.t. (c0, C, log sigma).

    Uses the self-normalized weights w_is over draws; all big reductions via
    einsum for thread-count determinism.
    """
    n = len(ws.counts)
    U = z * sigma[None, :]
    W = np.exp(cond - cond.max(axis=1, keepdims=True))
    W /= W.sum(axis=1, keepdims=True)  # (n, S)
    wbar = W.sum(axis=0)  # (S,)

    Ew = E * ws.w[:, None]  # (#nodes, S)
    V = np.einsum("nq,ns->qs", ws.A, Ew)  # (q, S): integral of beta * exp(eta_s)

    g_c0 = (ws.sum_b.sum(axis=0) - np.einsum("qs,s->q", V, wbar)) / n

    WU = np.einsum("ns,sp->np", W, U)
    term1 = np.einsum("nq,np->qp", ws.sum_b, WU)
    term2 = np.einsum("qs,sp->qp", V, U * wbar[:, None])
    g_C = (term1 - term2) / n

    P1 = ws.sum_b @ C  # (n, p)
    CtV = C.T @ V  # (p, S)
    t1 = (np.einsum("ns,np->sp", W, P1) * z).sum(axis=0)
    t2 = np.einsum("ks,sk,s->k", CtV, z, wbar)
    g_log_sigma = sigma * (t1 - t2) / n

    return ObjectiveGradient(c0=g_c0, C=g_C, log_sigma=g_log_sigma)


def objective_gradient(
    dataset: Dataset,
    theta: ModelParams,
    nu1: float,
    nu2: float,
    draws: MCDraws,
) -> ObjectiveGradient:
    """Analytic gradient of penalized_objective at fixed draws."""
    if nu1 < 0 or nu2 < 0:
        raise ValueError("smoothing parameters must be nonnegative")
    ws = _Workspace.build(dataset, theta.basis, theta.quad)
    _, cond, E = _loglik_terms(ws, theta.c0, theta.C, theta.sigma, draws.z)
    grad = _likelihood_gradient(ws, theta.c0, theta.C, theta.sigma, draws.z, cond, E)
    om = theta.penalty.values
    return ObjectiveGradient(
        c0=grad.c0 - 2.0 * nu1 * om @ theta.c0,
        C=grad.C - 2.0 * nu2 * om @ theta.C,
        log_sigma=grad.log_sigma,
    )
