"""Independent numerical oracles used to check the package implementation.

Everything here deliberately avoids the package's own quadrature, basis
evaluation paths (where possible), and likelihood code: Gauss-Hermite rules
for latent-score integrals (exact conditional formulas, closed-form inner
integrals), midpoint-Riemann and composite-Simpson rules for L2 and penalty
integrals, and plain central finite differences for gradients.
"""

import numpy as np
from scipy.special import gammaln

GH_NODES, GH_WEIGHTS = np.polynomial.hermite.hermgauss(64)


def gh_expect(fn, sigma: float) -> float:
    """E[fn(u)] for u ~ N(0, sigma^2) by 64-node Gauss-Hermite."""
    u = np.sqrt(2.0) * sigma * GH_NODES
    return float(GH_WEIGHTS @ fn(u) / np.sqrt(np.pi))


def constant_rate_loglik(rate_scale: float, m: int, u: np.ndarray) -> np.ndarray:
    """log f(x | u) when lambda_u(t) = rate_scale * e^u is constant on [0, 1]."""
    return -rate_scale * np.exp(u) + m * (np.log(rate_scale) + u) - gammaln(m + 1)


def gh_marginal_p1(rate_scale: float, m: int, sigma: float) -> float:
    """log f(x) for the constant-intensity p=1 fixture on [0, 1]."""
    return float(np.log(gh_expect(lambda u: np.exp(constant_rate_loglik(rate_scale, m, u)), sigma)))


def gh_posterior_mean_p1(rate_scale: float, m: int, sigma: float) -> float:
    """E[u | x] for the same fixture (self-normalized over GH nodes)."""
    u = np.sqrt(2.0) * sigma * GH_NODES
    lf = constant_rate_loglik(rate_scale, m, u)
    w = GH_WEIGHTS * np.exp(lf - lf.max())
    return float((w @ u) / w.sum())


def gh_marginal_p2_affine(points: np.ndarray, sigma1: float, sigma2: float, base_rate: float) -> float:
    """Tensor-grid GH oracle for lambda_u(t) = base_rate * exp(u1 + u2 phi2(t))
    on [0, 1] with phi2(t) = sqrt(12) (t - 1/2); the inner integral has the
    closed form base_rate e^{u1} (e^{b/2} - e^{-b/2}) / b, b = sqrt(12) u2."""
    m = len(points)
    phi2_sum = float(np.sqrt(12.0) * (points - 0.5).sum())
    u1 = np.sqrt(2.0) * sigma1 * GH_NODES
    u2 = np.sqrt(2.0) * sigma2 * GH_NODES
    b = np.sqrt(12.0) * u2[None, :]
    with np.errstate(over="ignore"):
        integral = base_rate * np.exp(u1[:, None]) * np.where(
            np.abs(b) < 1e-12, 1.0, (np.exp(b / 2.0) - np.exp(-b / 2.0)) / b
        )
    logf = -integral + m * (np.log(base_rate) + u1[:, None]) + u2[None, :] * phi2_sum - gammaln(m + 1)
    w = GH_WEIGHTS[:, None] * GH_WEIGHTS[None, :]
    return float(np.log(np.sum(w * np.exp(logf)) / np.pi))


def riemann_matrix(eval_fn, a: float, b: float, n_cells: int = 20000) -> np.ndarray:
    """Midpoint-Riemann estimate of the matrix of L2 inner products of the
    columns of eval_fn(points)."""
    x = a + (b - a) * (np.arange(n_cells) + 0.5) / n_cells
    vals = eval_fn(x)
    return vals.T @ vals * ((b - a) / n_cells)


def simpson_span_quadratic(eval_d2_fn, breakpoints: np.ndarray, c: np.ndarray) -> float:
    """integral of (g'')^2 for a cubic spline, by per-span composite Simpson.

    g'' is piecewise linear, so its square is piecewise quadratic and Simpson
    integrates each span exactly; this is independent of the Gauss-Legendre
    panels used by the implementation."""
    total = 0.0
    for lo, hi in zip(breakpoints[:-1], breakpoints[1:]):
        x = np.linspace(lo, hi, 5)
        gpp = eval_d2_fn(x) @ c
        h = (hi - lo) / 4.0
        total += (h / 3.0) * (gpp[0] ** 2 + 4 * gpp[1] ** 2 + 2 * gpp[2] ** 2 + 4 * gpp[3] ** 2 + gpp[4] ** 2)
    return total


def central_differences(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    for i in range(len(x)):
        step = np.zeros_like(x)
        step[i] = h
        grad[i] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad


def greville_sites(knots: np.ndarray, degree: int, q: int) -> np.ndarray:
    """Knot averages: coefficients c_j = a + b * site_j represent a + b t exactly."""
    return np.array([knots[j + 1 : j + 1 + degree].mean() for j in range(q)])


def blossom_quadratic_coefficients(knots: np.ndarray, degree: int, q: int) -> np.ndarray:
    """Exact B-spline coefficients of t^2: the polar form (blossom) of t^2
    evaluated at each coefficient's degree-sized knot window."""
    from itertools import combinations

    coef = np.empty(q)
    pairs = degree * (degree - 1) / 2.0
    for j in range(q):
        window = knots[j + 1 : j + 1 + degree]
        coef[j] = sum(a * b for a, b in combinations(window, 2)) / pairs
    return coef
