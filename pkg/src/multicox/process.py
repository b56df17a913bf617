"""Point-pattern containers, Poisson and doubly stochastic simulation, and
simulation-based functional expectations.

Simulation draws the count from Poisson(integral of lambda) and then places
points by rejection from the uniform distribution on B, using an envelope of
1.2 times the max intensity over the quadrature nodes, inflated and restarted
if a proposal ever exceeds it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, NamedTuple, Optional

import numpy as np

from .basis import BasisSystem, eval_basis
from .domain import ObservationDomain, QuadratureRule
from .exceptions import NumericError

if TYPE_CHECKING:
    from .likelihood import ModelParams

_MAX_EXPONENT = 700.0  # exp overflow guard for float64


@dataclass(frozen=True)
class PointPattern:
    """One replicate's events: shape (m,) for 1D domains, (m, 2) for 2D."""

    replicate_id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", pts)
        pts.setflags(write=False)

    @property
    def m(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class Dataset:
    """n replicates observed on a common domain."""

    domain: ObservationDomain
    patterns: list[PointPattern] = field(default_factory=list)

    def __post_init__(self):
        if len(self.patterns) < 1:
            raise ValueError("a dataset needs at least one replicate")
        for pat in self.patterns:
            if pat.m and not self.domain.contains_points(pat.points).all():
                raise ValueError(f"replicate {pat.replicate_id!r} has points outside the domain")

    @property
    def n(self) -> int:
        return len(self.patterns)

    @property
    def counts(self) -> np.ndarray:
        return np.array([p.m for p in self.patterns])


def _as_rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def intensity_at(c0: np.ndarray, C: np.ndarray, u: np.ndarray, basis: BasisSystem, points) -> np.ndarray:
    """lambda(t) = exp((c0 + C u)' beta(t)) at each point."""
    c0 = np.asarray(c0, dtype=float)
    C = np.asarray(C, dtype=float)
    u = np.asarray(u, dtype=float)
    if c0.shape != (basis.q,) or C.shape[0] != basis.q or u.shape != (C.shape[1],):
        raise ValueError(
            f"dimension mismatch: c0 {c0.shape}, C {C.shape}, u {u.shape} for q={basis.q}"
        )
    coef = c0 + C @ u
    eta = eval_basis(basis, points) @ coef
    return np.exp(eta)


def _uniform_on_domain(domain: ObservationDomain, size: int, rng: np.random.Generator) -> np.ndarray:
    if domain.kind == "interval":
        return rng.uniform(domain.a, domain.b, size=size)
    x0, x1, y0, y1 = domain.rect
    out = np.empty((size, 2))
    filled = 0
    while filled < size:
        block = max(2 * (size - filled), 64)
        cand = np.column_stack([rng.uniform(x0, x1, block), rng.uniform(y0, y1, block)])
        keep = cand[domain.contains_points(cand)]
        take = min(len(keep), size - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def simulate_poisson(
    c0: np.ndarray,
    C: np.ndarray,
    u: np.ndarray,
    basis: BasisSystem,
    domain: ObservationDomain,
    rng_seed,
    quad: Optional[QuadratureRule] = None,
    replicate_id: str = "sim",
) -> PointPattern:
    """Draw one Poisson pattern with intensity exp((c0 + C u)' beta)."""
    rng = _as_rng(rng_seed)
    quad = quad if quad is not None else basis.default_quadrature()
    coef = np.asarray(c0, dtype=float) + np.asarray(C, dtype=float) @ np.asarray(u, dtype=float)
    eta_nodes = basis.evaluate(quad.nodes) @ coef
    if not np.isfinite(eta_nodes).all() or eta_nodes.max(initial=-np.inf) > _MAX_EXPONENT:
        raise NumericError(f"non-finite intensity; max exponent {eta_nodes.max(initial=np.nan):.3g}")
    lam_nodes = np.exp(eta_nodes)
    total = float(quad.weights @ lam_nodes)
    if not np.isfinite(total):
        raise NumericError("intensity integral is not finite")

    m = int(rng.poisson(total))
    envelope = 1.2 * float(lam_nodes.max())
    while True:
        accepted: list[np.ndarray] = []
        violated = False
        while sum(len(a) for a in accepted) < m:
            block = max(2 * m, 64)
            cand = _uniform_on_domain(domain, block, rng)
            lam_cand = np.exp(basis.evaluate(cand) @ coef)
            worst = float(lam_cand.max(initial=0.0))
            if worst > envelope:
                envelope = 1.2 * worst  # node max underestimated sup lambda; restart
                violated = True
                break
            keep = cand[rng.uniform(size=block) * envelope <= lam_cand]
            accepted.append(keep)
        if not violated:
            break
    pts = np.concatenate(accepted)[:m] if m else np.empty((0,) if domain.kind == "interval" else (0, 2))
    return PointPattern(replicate_id=replicate_id, points=pts)


def replicate_rngs(seed, n: int) -> list[np.random.Generator]:
    """One independent, reproducible stream per replicate index."""
    return [np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,))) for i in range(n)]


def simulate_replicates(
    theta: "ModelParams",
    basis: BasisSystem,
    domain: ObservationDomain,
    n: int,
    rng_seed,
) -> tuple[Dataset, np.ndarray]:
    """Doubly stochastic sample: u_i ~ N(0, diag sigma^2), then a Poisson
    pattern per replicate. Returns the dataset and the (n, p) true scores."""
    if n < 1:
        raise ValueError("n must be >= 1")
    quad = basis.default_quadrature()
    p = len(theta.sigma)
    scores = np.empty((n, p))
    patterns = []
    for i, rng in enumerate(replicate_rngs(rng_seed, n)):
        u = theta.sigma * rng.standard_normal(p)
        scores[i] = u
        patterns.append(
            simulate_poisson(theta.c0, theta.C, u, basis, domain, rng, quad=quad, replicate_id=f"rep{i:04d}")
        )
    return Dataset(domain=domain, patterns=patterns), scores


class FunctionalEstimate(NamedTuple):
    value: float
    se: float


def expect_functional(
    h: Callable[[PointPattern], float],
    theta: "ModelParams",
    basis: BasisSystem,
    domain: ObservationDomain,
    n_sims: int,
    rng_seed,
) -> FunctionalEstimate:
    """Monte Carlo estimate of E[h(X_B)] with its standard error."""
    dataset, _ = simulate_replicates(theta, basis, domain, n_sims, rng_seed)
    vals = np.array([float(h(pat)) for pat in dataset.patterns])
    if not np.isfinite(vals).all():
        raise NumericError("h returned a non-finite value")
    se = float(vals.std(ddof=1) / np.sqrt(n_sims)) if n_sims > 1 else float("nan")
    return FunctionalEstimate(value=float(vals.mean()), se=se)
