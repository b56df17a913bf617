"""Basis systems for the log-intensity: B-splines (1D) and renormalized
Gaussian kernels (2D), with the L2 Gram matrix J and the curvature penalty
matrix Omega built by quadrature.

Both basis kinds are partitions of unity, so a constant coefficient vector
represents a constant function and row sums of every evaluation matrix are 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .domain import ObservationDomain, QuadratureRule, build_quadrature


class BasisSystem:
    """Common interface: q basis functions over an attached domain."""

    kind: str
    q: int
    domain: ObservationDomain

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def default_quadrature(self) -> QuadratureRule:
        raise NotImplementedError


def _check_in_domain(domain: ObservationDomain, points: np.ndarray) -> None:
    ok = domain.contains_points(points)
    if not ok.all():
        bad = np.atleast_1d(points)[~ok] if domain.kind == "interval" else np.atleast_2d(points)[~ok]
        raise ValueError(f"point outside domain: {np.asarray(bad)[0]!r}")


class BSplineBasis(BasisSystem):
    """Clamped B-spline basis on an interval domain.

    Knots are the full clamped vector (boundary knots repeated degree+1
    times); q = len(knots) - degree - 1.
    """

    kind = "bspline"

    def __init__(self, domain: ObservationDomain, knots: np.ndarray, degree: int):
        if domain.kind != "interval":
            raise ValueError("B-spline basis requires a 1D interval domain")
        if degree < 1:
            raise ValueError("degree must be >= 1")
        knots = np.asarray(knots, dtype=float)
        if (np.diff(knots) < 0).any():
            raise ValueError("knot vector must be nondecreasing")
        self.domain = domain
        self.degree = int(degree)
        self.knots = knots
        self.q = len(knots) - degree - 1
        eye = np.eye(self.q)
        self._spline = BSpline(knots, eye, degree, extrapolate=False)
        self._spline_d2 = self._spline.derivative(2) if degree >= 2 else None

    @property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values: the panel edges for exact penalty quadrature."""
        return np.unique(self.knots)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        out = self._spline(pts)
        return np.nan_to_num(out, nan=0.0) if np.isnan(out).any() else out

    def second_derivatives(self, points: np.ndarray) -> np.ndarray:
        if self._spline_d2 is None:
            raise ValueError("second derivatives require degree >= 2")
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        return self._spline_d2(pts)

    def default_quadrature(self, nodes_per_span: int = 5) -> QuadratureRule:
        return build_quadrature(self.domain, nodes_per_span, breakpoints=self.breakpoints)


class GaussianKernelBasis(BasisSystem):
    """Renormalized Gaussian radial kernels on a planar domain.

    beta_k(t) = exp(-|t - tau_k|^2 / 2 delta_k^2) / sum_j exp(-|t - tau_j|^2 / 2 delta_j^2),
    a partition of unity by construction. Evaluation subtracts the pointwise
    max exponent before exponentiating; every quantity below is a ratio of
    kernel values at one point, so that common rescaling cancels exactly.
    """

    kind = "gaussian_kernel"

    def __init__(self, domain: ObservationDomain, centers: np.ndarray, bandwidths: np.ndarray):
        if domain.kind != "planar":
            raise ValueError("Gaussian kernel basis requires a planar domain")
        centers = np.asarray(centers, dtype=float)
        bandwidths = np.asarray(bandwidths, dtype=float)
        if centers.ndim != 2 or centers.shape[1] != 2:
            raise ValueError("centers must be a (q, 2) array")
        if bandwidths.shape != (len(centers),) or (bandwidths <= 0).any():
            raise ValueError("bandwidths must be positive, one per center")
        if not domain.contains_points(centers).all():
            raise ValueError("all kernel centers must lie inside the domain")
        self.domain = domain
        self.centers = centers
        self.bandwidths = bandwidths
        self.q = len(centers)

    def _scaled_kernels(self, pts: np.ndarray):
        """Kernel values scaled by exp(-max exponent) per point: (g, S, d)."""
        d = pts[:, None, :] - self.centers[None, :, :]  # (N, q, 2)
        expo = -0.5 * np.einsum("nkd,nkd->nk", d, d) / self.bandwidths**2
        expo -= expo.max(axis=1, keepdims=True)
        g = np.exp(expo)
        return g, g.sum(axis=1), d

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g, s, _ = self._scaled_kernels(pts)
        return g / s[:, None]

    def hessian_components(self, points: np.ndarray):
        """Analytic (d2/dx2, d2/dxdy, d2/dy2) of each beta_k, each (N, q).

        Quotient rule for beta_k = g_k / S with S = sum_j g_j; all terms are
        homogeneous of degree 0 in a pointwise rescaling of the g_j, so the
        stabilized kernels can be used directly.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        g, s, d = self._scaled_kernels(pts)
        inv_b2 = 1.0 / self.bandwidths**2  # (q,)

        grad = -g[:, :, None] * d * inv_b2[None, :, None]  # (N, q, 2)
        outer = np.einsum("nki,nkj->nkij", d, d)  # (N, q, 2, 2)
        eye = np.eye(2)
        hess = g[:, :, None, None] * (
            outer * inv_b2[None, :, None, None] ** 2 - eye[None, None, :, :] * inv_b2[None, :, None, None]
        )  # (N, q, 2, 2)

        grad_s = grad.sum(axis=1)  # (N, 2)
        hess_s = hess.sum(axis=1)  # (N, 2, 2)
        s1 = s[:, None, None, None]

        cross = np.einsum("nki,nj->nkij", grad, grad_s)
        hbeta = (
            hess / s1
            - (cross + np.swapaxes(cross, -1, -2)) / s1**2
            - g[:, :, None, None] * hess_s[:, None, :, :] / s1**2
            + 2.0 * g[:, :, None, None] * np.einsum("ni,nj->nij", grad_s, grad_s)[:, None, :, :] / s1**3
        )
        return hbeta[..., 0, 0], hbeta[..., 0, 1], hbeta[..., 1, 1]

    def default_quadrature(self, resolution: int = 128) -> QuadratureRule:
        return build_quadrature(self.domain, resolution)


def make_bspline_basis(domain: ObservationDomain, num_interior_knots: int, degree: int) -> BSplineBasis:
    """Clamped B-splines with equally spaced knots; q = num_interior_knots + degree + 1."""
    if domain.kind != "interval":
        raise ValueError("B-spline basis requires a 1D interval domain")
    if num_interior_knots < 0:
        raise ValueError("num_interior_knots must be >= 0")
    interior = np.linspace(domain.a, domain.b, num_interior_knots + 2)[1:-1]
    knots = np.concatenate([np.full(degree + 1, domain.a), interior, np.full(degree + 1, domain.b)])
    return BSplineBasis(domain, knots, degree)


def make_kernel_basis(domain: ObservationDomain, grid_count: int) -> GaussianKernelBasis:
    """Gaussian kernels on a sqrt(grid_count) x sqrt(grid_count) grid over the
    bounding rect; centers outside B are pruned, then delta_k is half the
    distance from tau_k to its nearest surviving neighbor."""
    if domain.kind != "planar":
        raise ValueError("kernel basis requires a planar domain")
    side = int(round(np.sqrt(grid_count)))
    if side * side != grid_count or grid_count < 4:
        raise ValueError("grid_count must be a perfect square >= 4")
    x0, x1, y0, y1 = domain.rect
    gx, gy = np.meshgrid(np.linspace(x0, x1, side), np.linspace(y0, y1, side), indexing="ij")
    centers = np.column_stack([gx.ravel(), gy.ravel()])
    centers = centers[domain.contains_points(centers)]
    if len(centers) == 0:
        raise ValueError("all kernel centers fall outside the domain")
    if len(centers) == 1:
        raise ValueError("only one kernel center survives the mask; refine the grid")
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    bandwidths = 0.5 * dist.min(axis=1)
    return GaussianKernelBasis(domain, centers, bandwidths)


def eval_basis(basis: BasisSystem, points: np.ndarray) -> np.ndarray:
    """Evaluation matrix with row i = beta(t_i); errors on out-of-domain points."""
    _check_in_domain(basis.domain, np.asarray(points, dtype=float))
    return basis.evaluate(points)


@dataclass(frozen=True)
class GramMatrix:
    """J[j, k] = integral over B of beta_j * beta_k."""

    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)


@dataclass(frozen=True)
class PenaltyMatrix:
    """Omega[j, k] = integral over B of the Frobenius inner product of the
    Hessians of beta_j and beta_k, so c'Omega c is the roughness of c'beta."""

    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)


def _accumulate_weighted_cross(mats: list[np.ndarray], factors: list[float], w: np.ndarray) -> np.ndarray:
    """sum_i factor_i * M_i' diag(w) M_i, accumulated in extended precision.

    Penalty entries are large (second derivatives scale like 1/knot_span^2)
    while the null-space identity c'Omega c = 0 for affine c relies on
    cancellation; float64 assembly leaves ~1e-10 residues, extended precision
    brings them below the invariant tolerances.
    """
    wl = w.astype(np.longdouble)
    total = np.zeros((mats[0].shape[1], mats[0].shape[1]), dtype=np.longdouble)
    for mat, factor in zip(mats, factors):
        ml = mat.astype(np.longdouble)
        total += factor * np.einsum("nj,n,nk->jk", ml, wl, ml)
    out = total.astype(float)
    return 0.5 * (out + out.T)


def gram_matrix(basis: BasisSystem, quad: QuadratureRule) -> GramMatrix:
    b = basis.evaluate(quad.nodes)
    return GramMatrix(values=_accumulate_weighted_cross([b], [1.0], quad.weights))


def penalty_matrix(basis: BasisSystem, quad: QuadratureRule) -> PenaltyMatrix:
    """Curvature penalty: int (g'')^2 in 1D; in 2D the Frobenius form
    int gxx^2 + 2 gxy^2 + gyy^2, assembled from analytic kernel Hessians.

    For cubic splines the per-span Gauss rule integrates the piecewise
    quadratic integrand exactly."""
    if isinstance(basis, BSplineBasis):
        if basis.degree < 2:
            raise ValueError("penalty requires a twice-differentiable basis (spline degree >= 2)")
        d2 = basis.second_derivatives(quad.nodes)
        om = _accumulate_weighted_cross([d2], [1.0], quad.weights)
    else:
        bxx, bxy, byy = basis.hessian_components(quad.nodes)
        om = _accumulate_weighted_cross([bxx, bxy, byy], [1.0, 2.0, 1.0], quad.weights)
    return PenaltyMatrix(values=om)
