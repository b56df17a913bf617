"""Penalized maximum likelihood fitting and cross-validation.

Fitting is sample average approximation: Monte Carlo draws are frozen, the
resulting deterministic objective is maximized by L-BFGS-B over
(c0, C, log sigma), the result is put in canonical form, and the cycle
optionally repeats with fresh draws.

The raw parameterization carries an exact gauge freedom: scaling a column
c_k by a while dividing sigma_k by a leaves every draw's intensity
unchanged. The literal component penalty sum_k c_k'Omega c_k decreases
along that direction, so the optimizer ascends sum_k c_k'Omega c_k /
c_k'J c_k instead, which is gauge-neutral and coincides with the literal
penalty whenever the columns have unit J-norm (as canonical parameters do).

All seeds below derive from FitConfig.seed via fixed integer tags, so every
fit, draw set, and fold is reproducible bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import minimize

from .basis import BasisSystem, GramMatrix, PenaltyMatrix, gram_matrix, penalty_matrix
from .domain import QuadratureRule
from .exceptions import EstimationError, NumericError
from .likelihood import (
    MCDraws,
    ModelParams,
    _likelihood_gradient,
    _loglik_terms,
    _Workspace,
    marginal_loglik,
    penalized_objective,
    per_replicate_logliks,
)
from .process import Dataset
from .scores import posterior_scores_dataset

_TAG_STAGE_DRAWS = 1
_TAG_INIT = 2
_TAG_EVAL = 3
_TAG_FOLD_FIT = 4
_TAG_FOLD_EVAL = 5
_GUARD_VALUE = 1e12


def _seed_tuple(seed) -> tuple[int, ...]:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)


def child_seed(seed, *tags: int) -> tuple[int, ...]:
    """Deterministic derived seed for a named sub-stream."""
    return _seed_tuple(seed) + tags


def fold_fit_seed(seed, grid_index: int, fold: int) -> tuple[int, ...]:
    """Seed used by cross_validate for the fit of one (grid point, fold)."""
    return child_seed(seed, _TAG_FOLD_FIT, grid_index, fold)


def fold_eval_seed(seed, grid_index: int, fold: int) -> tuple[int, ...]:
    """Seed of the held-out evaluation draws for one (grid point, fold)."""
    return child_seed(seed, _TAG_FOLD_EVAL, grid_index, fold)


@dataclass(frozen=True)
class FitConfig:
    """Controls one penalized fit; see cross_validate for grid search."""

    p: int
    nu1: float
    nu2: float
    S: int = 1000
    S_eval: int = 10_000
    seed: object = 0
    max_outer_iters: int = 2
    max_inner_iters: int = 500
    gtol: float = 1e-5
    multistart: int = 1
    init_mode: str = "random"

    def __post_init__(self):
        if self.p < 0:
            raise ValueError("p must be >= 0")
        if self.nu1 < 0 or self.nu2 < 0:
            raise ValueError("smoothing parameters must be nonnegative")
        for name, s in (("S", self.S), ("S_eval", self.S_eval)):
            if s < 2 or s % 2 != 0:
                raise ValueError(f"{name} must be an even integer >= 2")
        if self.gtol <= 0:
            raise ValueError("gtol must be positive")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1 or self.multistart < 1:
            raise ValueError("iteration and multistart counts must be >= 1")
        if self.init_mode != "random":
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if any(int(t) < 0 for t in _seed_tuple(self.seed)):
            raise ValueError("seed entries must be nonnegative integers")


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    objective: float
    trace: list[list[float]]
    per_replicate_loglik: np.ndarray
    converged: bool
    scores: np.ndarray
    score_se: np.ndarray
    config: FitConfig


@dataclass(frozen=True)
class CVEntry:
    nu1: float
    nu2: float
    p: int
    cv_value: float
    valid: bool


@dataclass(frozen=True)
class CVTable:
    entries: list[CVEntry]
    best_index: int

    @property
    def best(self) -> CVEntry:
        return self.entries[self.best_index]


def _basis_matrices(
    basis: BasisSystem,
    quad: Optional[QuadratureRule],
    gram: Optional[GramMatrix],
    penalty: Optional[PenaltyMatrix],
):
    quad = quad if quad is not None else basis.default_quadrature()
    gram = gram if gram is not None else gram_matrix(basis, quad)
    penalty = penalty if penalty is not None else penalty_matrix(basis, quad)
    return quad, gram, penalty


def _fit_mean_coefficients(ws: _Workspace, omega: np.ndarray, nu1: float, measure: float) -> np.ndarray:
    """Concave p=0 penalized Poisson fit for c0."""
    n, q = ws.sum_b.shape
    mean_sum_b = ws.sum_b.mean(axis=0)
    rate = max(ws.counts.mean(), 0.5) / measure
    x0 = np.full(q, np.log(rate))

    def neg(c0):
        eta = ws.A @ c0
        top = float(eta.max(initial=-np.inf))
        if top > 700.0:
            return _GUARD_VALUE * (1.0 + top - 700.0), np.zeros(q)
        lam = np.exp(eta)
        integral = float(ws.w @ lam)
        value = -integral + float(mean_sum_b @ c0) - nu1 * float(c0 @ omega @ c0)
        grad = -np.einsum("nq,n->q", ws.A, ws.w * lam) + mean_sum_b - 2.0 * nu1 * omega @ c0
        return -value, -grad

    res = minimize(neg, x0, jac=True, method="L-BFGS-B", options={"maxiter": 500, "gtol": 1e-9})
    if not np.isfinite(res.fun):
        raise EstimationError("mean-only Poisson fit diverged")
    return res.x


def _random_orthonormal_columns(q: int, p: int, j: np.ndarray, seed) -> np.ndarray:
    """Random q x p matrix with columns orthonormal in the J inner product."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = rng.standard_normal((q, p))
    m = x.T @ j @ x
    r = scipy.linalg.cholesky(m, lower=False)
    return scipy.linalg.solve_triangular(r, x.T, trans="T", lower=False).T


def initialize(
    dataset: Dataset,
    basis: BasisSystem,
    config: FitConfig,
    quad: Optional[QuadratureRule] = None,
    gram: Optional[GramMatrix] = None,
    penalty: Optional[PenaltyMatrix] = None,
    start: int = 0,
) -> ModelParams:
    """Starting point: c0 from the concave mean-only fit, C random
    J-orthonormal (seeded), sigma_k = 0.5 / k."""
    quad, gram, penalty = _basis_matrices(basis, quad, gram, penalty)
    ws = _Workspace.build(dataset, basis, quad)
    c0 = _fit_mean_coefficients(ws, penalty.values, config.nu1, basis.domain.measure)
    if config.p == 0:
        C = np.zeros((basis.q, 0))
        sigma = np.zeros(0)
    else:
        C = _random_orthonormal_columns(basis.q, config.p, gram.values, child_seed(config.seed, _TAG_INIT, start))
        sigma = 0.5 / np.arange(1, config.p + 1)
    return ModelParams(c0=c0, C=C, sigma=sigma, basis=basis, gram=gram, penalty=penalty, quad=quad)


def canonicalize(theta: ModelParams, gram: Optional[GramMatrix] = None, return_rotation: bool = False):
    """Canonical form: J-orthonormal columns, sigma descending, max-|entry|
    positive per column; the distribution of C U is preserved exactly via
    eigendecomposition of C diag(sigma^2) C' in the J metric.

    With return_rotation=True, also returns the orthogonal p x p matrix R
    with C' diag(sigma') (R z) = C diag(sigma) z for every draw z; applying R
    to the draws reproduces every conditional log-density bit-for-bit up to
    roundoff.
    """
    j = (gram if gram is not None else theta.gram).values
    p = theta.p
    if p == 0:
        return (theta, np.zeros((0, 0))) if return_rotation else theta

    ell = scipy.linalg.cholesky(j, lower=True)
    b = ell.T @ theta.C  # (q, p)
    m = b * theta.sigma[None, :] ** 2 @ b.T
    m = 0.5 * (m + m.T)
    vals, vecs = scipy.linalg.eigh(m)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    top = vals[:p]
    if top[-1] <= 0 or top[-1] <= 1e-12 * max(top[0], 1e-300):
        raise EstimationError(
            "component coefficient matrix is numerically rank deficient; consider a smaller p"
        )
    sigma_new = np.sqrt(top)
    q_cols = vecs[:, :p]
    c_new = scipy.linalg.solve_triangular(ell, q_cols, trans="T", lower=True)

    rotation = (q_cols.T @ b) * (theta.sigma[None, :] / sigma_new[:, None])
    for k in range(p):
        if c_new[np.argmax(np.abs(c_new[:, k])), k] < 0:
            c_new[:, k] = -c_new[:, k]
            rotation[k, :] = -rotation[k, :]

    out = theta.replace_coefficients(C=c_new, sigma=sigma_new)
    return (out, rotation) if return_rotation else out


def _pack(c0: np.ndarray, C: np.ndarray, log_sigma: np.ndarray) -> np.ndarray:
    return np.concatenate([c0, C.ravel(), log_sigma])


def _unpack(x: np.ndarray, q: int, p: int):
    c0 = x[:q]
    C = x[q : q + q * p].reshape(q, p)
    log_sigma = x[q + q * p :]
    return c0, C, log_sigma


def _gauge_penalty_and_grad(C: np.ndarray, omega: np.ndarray, j: np.ndarray):
    """Scale-free roughness sum_k (c_k'Om c_k)/(c_k'J c_k) and its C-gradient."""
    if C.shape[1] == 0:
        return 0.0, np.zeros_like(C)
    oc = omega @ C
    jc = j @ C
    num = np.einsum("qk,qk->k", C, oc)
    den = np.einsum("qk,qk->k", C, jc)
    value = float(np.sum(num / den))
    grad = 2.0 * (oc / den[None, :] - jc * (num / den**2)[None, :])
    return value, grad


class _SAAObjective:
    """Negated gauge-fixed objective with gradient, memoizing the last value
    so the iteration trace can be recorded without re-evaluation."""

    def __init__(self, ws: _Workspace, omega, j, nu1, nu2, z, q, p):
        self.ws, self.omega, self.j = ws, omega, j
        self.nu1, self.nu2, self.z = nu1, nu2, z
        self.q, self.p = q, p
        self.last: tuple[bytes, float] = (b"", np.nan)

    def __call__(self, x: np.ndarray):
        c0, C, log_sigma = _unpack(x, self.q, self.p)
        if log_sigma.max(initial=-np.inf) > 40.0:
            return _GUARD_VALUE * (1.0 + float(log_sigma.max())), np.zeros_like(x)
        sigma = np.exp(log_sigma)
        try:
            per_rep, cond, E = _loglik_terms(self.ws, c0, C, sigma, self.z)
        except NumericError:
            return _GUARD_VALUE, np.zeros_like(x)
        grad_lik = _likelihood_gradient(self.ws, c0, C, sigma, self.z, cond, E)
        pen_c, grad_pen_c = self._mean_penalty(c0)
        pen_comp, grad_pen_comp = _gauge_penalty_and_grad(C, self.omega, self.j)
        value = float(per_rep.mean()) - self.nu1 * pen_c - self.nu2 * pen_comp
        g = _pack(
            grad_lik.c0 - self.nu1 * grad_pen_c,
            grad_lik.C - self.nu2 * grad_pen_comp,
            grad_lik.log_sigma,
        )
        self.last = (x.tobytes(), -value)
        return -value, -g

    def _mean_penalty(self, c0):
        oc = self.omega @ c0
        return float(c0 @ oc), 2.0 * oc

    def value_at(self, x: np.ndarray) -> float:
        key = x.tobytes()
        if key == self.last[0]:
            return self.last[1]
        return self(x)[0]


def fit(
    dataset: Dataset,
    basis: BasisSystem,
    config: FitConfig,
    quad: Optional[QuadratureRule] = None,
    gram: Optional[GramMatrix] = None,
    penalty: Optional[PenaltyMatrix] = None,
) -> FitResult:
    """Penalized ML fit: multistart SAA stages of L-BFGS-B ascent, canonical
    form enforced at stage boundaries and on the returned estimate."""
    quad, gram, penalty = _basis_matrices(basis, quad, gram, penalty)
    ws = _Workspace.build(dataset, basis, quad)
    omega, j = penalty.values, gram.values
    q, p = basis.q, config.p

    c0_init = _fit_mean_coefficients(ws, omega, config.nu1, basis.domain.measure)
    n_starts = 1 if p == 0 else config.multistart

    stage_draws = [
        MCDraws.generate(p, config.S, child_seed(config.seed, _TAG_STAGE_DRAWS, stage))
        for stage in range(config.max_outer_iters)
    ]

    best: Optional[dict] = None
    for start in range(n_starts):
        if p == 0:
            x = _pack(c0_init, np.zeros((q, 0)), np.zeros(0))
        else:
            C0 = _random_orthonormal_columns(q, p, j, child_seed(config.seed, _TAG_INIT, start))
            x = _pack(c0_init, C0, np.log(0.5 / np.arange(1, p + 1)))

        traces: list[list[float]] = []
        success = False
        final_neg = np.inf
        for stage, draws in enumerate(stage_draws):
            objective = _SAAObjective(ws, omega, j, config.nu1, config.nu2, draws.z, q, p)
            f0, _ = objective(x)
            if not np.isfinite(f0) or f0 >= _GUARD_VALUE:
                raise EstimationError("objective is not finite at the initial point")
            trace = [-f0]
            res = minimize(
                objective,
                x,
                jac=True,
                method="L-BFGS-B",
                callback=lambda xk: trace.append(-objective.value_at(xk)),
                options={"maxiter": config.max_inner_iters, "gtol": config.gtol},
            )
            traces.append(trace)
            x = res.x
            success = bool(res.success)
            final_neg = float(res.fun)
            if p > 0 and stage < len(stage_draws) - 1:
                c0_s, C_s, ls_s = _unpack(x, q, p)
                theta_s = ModelParams(
                    c0=c0_s, C=C_s, sigma=np.exp(ls_s), basis=basis, gram=gram, penalty=penalty, quad=quad
                )
                theta_s = canonicalize(theta_s, gram)
                x = _pack(theta_s.c0, theta_s.C, np.log(theta_s.sigma))

        if best is None or final_neg < best["final_neg"]:
            best = {"x": x, "final_neg": final_neg, "traces": traces, "success": success}

    assert best is not None
    c0_b, C_b, ls_b = _unpack(best["x"], q, p)
    theta_hat = ModelParams(
        c0=c0_b, C=C_b, sigma=np.exp(ls_b) if p else np.zeros(0), basis=basis, gram=gram, penalty=penalty, quad=quad
    )
    if p > 0:
        theta_hat = canonicalize(theta_hat, gram)

    eval_draws = MCDraws.generate(p, config.S_eval, child_seed(config.seed, _TAG_EVAL))
    per_rep = per_replicate_logliks(dataset, theta_hat, eval_draws)
    scores, score_se, _ = posterior_scores_dataset(dataset, theta_hat, eval_draws)
    objective_value = penalized_objective(dataset, theta_hat, config.nu1, config.nu2, stage_draws[-1])

    return FitResult(
        params=theta_hat,
        objective=objective_value,
        trace=best["traces"],
        per_replicate_loglik=per_rep,
        converged=best["success"],
        scores=scores,
        score_se=score_se,
        config=config,
    )


def cross_validate(
    dataset: Dataset,
    basis: BasisSystem,
    grid: Sequence[tuple[float, float, int]],
    folds: int,
    config: FitConfig,
    quad: Optional[QuadratureRule] = None,
    gram: Optional[GramMatrix] = None,
    penalty: Optional[PenaltyMatrix] = None,
) -> CVTable:
    """K-fold cross-validation over (nu1, nu2, p), maximizing the summed
    held-out marginal log-likelihood; folds = n is exact leave-one-out.

    Replicate i belongs to fold i mod folds. Held-out log-likelihoods are
    evaluated at S_eval draws seeded by fold_eval_seed; fold fits are seeded
    by fold_fit_seed. A failed fold fit invalidates its grid point only.
    """
    n = dataset.n
    if not (2 <= folds <= n):
        raise ValueError(f"folds must be between 2 and n={n}")
    if len(grid) == 0:
        raise ValueError("grid must contain at least one (nu1, nu2, p) point")
    quad, gram, penalty = _basis_matrices(basis, quad, gram, penalty)

    entries: list[CVEntry] = []
    for gi, (nu1, nu2, p) in enumerate(grid):
        total = 0.0
        valid = True
        for fold in range(folds):
            held = [i for i in range(n) if i % folds == fold]
            train = [dataset.patterns[i] for i in range(n) if i % folds != fold]
            if not held or not train:
                continue
            cfg = replace(config, p=int(p), nu1=float(nu1), nu2=float(nu2), seed=fold_fit_seed(config.seed, gi, fold))
            try:
                result = fit(Dataset(domain=dataset.domain, patterns=train), basis, cfg, quad, gram, penalty)
            except (EstimationError, NumericError):
                valid = False
                break
            eval_draws = MCDraws.generate(int(p), config.S_eval, fold_eval_seed(config.seed, gi, fold))
            for i in held:
                total += marginal_loglik(dataset.patterns[i], result.params, eval_draws)
        entries.append(CVEntry(nu1=float(nu1), nu2=float(nu2), p=int(p), cv_value=total if valid else float("nan"), valid=valid))

    valid_idx = [i for i, e in enumerate(entries) if e.valid]
    if not valid_idx:
        raise EstimationError("every grid point failed to fit")
    best_index = max(valid_idx, key=lambda i: entries[i].cv_value)
    return CVTable(entries=entries, best_index=best_index)
