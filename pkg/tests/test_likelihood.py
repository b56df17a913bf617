import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import multicox as mx
from conftest import make_params
from oracles import central_differences, gh_marginal_p1, gh_marginal_p2_affine, greville_sites

# frozen 64-node Gauss-Hermite oracle values for the constant-rate fixtures
GH_P1_RATE5_M5_SIGMA05 = -2.146342786701193
GH_P2_RATE5_SIGMAS_05_03 = -2.3361439652692906


@pytest.fixture(scope="module")
def small_instance(cubic_setup):
    """Random q=14, p=2, n=5 instance with matching dataset and draws."""
    basis, quad, gram, penalty = cubic_setup
    rng = np.random.default_rng(3)
    c0 = rng.normal(np.log(8.0), 0.3, basis.q)
    C = rng.normal(0.0, 0.4, (basis.q, 2))
    theta = make_params(basis, quad, gram, penalty, c0, C, [0.7, 0.4])
    pats = [mx.PointPattern(f"r{i}", np.sort(rng.uniform(0, 1, rng.poisson(8)))) for i in range(5)]
    ds = mx.Dataset(domain=basis.domain, patterns=pats)
    draws = mx.MCDraws.generate(2, 200, seed=11)
    return theta, ds, draws


class TestCondLoglik:
    def test_unit_rate_empty_pattern(self, cubic_setup):
        basis, quad, gram, penalty = cubic_setup
        th = make_params(basis, quad, gram, penalty, np.zeros(basis.q))
        value = mx.cond_loglik(mx.PointPattern("e", np.array([])), np.zeros(0), th)
        assert value == pytest.approx(-1.0, abs=1e-12)

    def test_rate_two_single_point(self, cubic_setup):
        basis, quad, gram, penalty = cubic_setup
        th = make_params(basis, quad, gram, penalty, np.full(basis.q, np.log(2.0)))
        value = mx.cond_loglik(mx.PointPattern("x", np.array([0.5])), np.zeros(0), th)
        assert value == pytest.approx(-2.0 + np.log(2.0), abs=1e-12)

    def test_zero_scores_match_mean_only_model(self, flat_rate5, five_point_pattern):
        th = flat_rate5
        th0 = th.replace_coefficients(C=np.zeros((th.q, 0)), sigma=np.zeros(0))
        v1 = mx.cond_loglik(five_point_pattern, np.zeros(1), th)
        v0 = mx.cond_loglik(five_point_pattern, np.zeros(0), th0)
        assert v1 == pytest.approx(v0, abs=1e-14)

    def test_overflow_reports_exponent(self, cubic_setup):
        basis, quad, gram, penalty = cubic_setup
        th = make_params(basis, quad, gram, penalty, np.full(basis.q, 900.0))
        with pytest.raises(mx.NumericError, match="900"):
            mx.cond_loglik(mx.PointPattern("x", np.array([0.5])), np.zeros(0), th)


class TestPriorLoglik:
    def test_standard_normal_at_zero(self):
        assert mx.prior_loglik(np.zeros(1), np.ones(1)) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-12)

    def test_independence_additivity(self):
        u = np.array([0.3, -1.2])
        s = np.array([0.7, 2.0])
        total = mx.prior_loglik(u, s)
        parts = mx.prior_loglik(u[:1], s[:1]) + mx.prior_loglik(u[1:], s[1:])
        assert total == pytest.approx(parts, abs=1e-12)

    def test_standardization_identity(self):
        z, sigma = 1.7, 0.4
        value = mx.prior_loglik(np.array([sigma * z]), np.array([sigma]))
        assert value == pytest.approx(-0.5 * np.log(2 * np.pi * sigma**2) - z**2 / 2, abs=1e-12)

    def test_nonpositive_sigma_rejected(self):
        with pytest.raises(ValueError):
            mx.prior_loglik(np.zeros(1), np.zeros(1))


class TestMCDraws:
    def test_antithetic_structure(self):
        draws = mx.MCDraws.generate(3, 100, seed=5)
        np.testing.assert_array_equal(draws.z[:50], -draws.z[50:])

    def test_regenerable(self):
        a = mx.MCDraws.generate(2, 64, seed=9)
        b = mx.MCDraws.generate(2, 64, seed=9)
        assert np.array_equal(a.z, b.z)

    def test_odd_s_rejected(self):
        with pytest.raises(ValueError):
            mx.MCDraws.generate(1, 101, seed=0)


class TestMarginalLoglik:
    def test_p0_equals_conditional_exactly(self, cubic_setup, five_point_pattern):
        basis, quad, gram, penalty = cubic_setup
        th = make_params(basis, quad, gram, penalty, np.full(basis.q, np.log(5.0)))
        draws = mx.MCDraws.generate(0, 100, seed=1)
        assert mx.marginal_loglik(five_point_pattern, th, draws) == mx.cond_loglik(
            five_point_pattern, np.zeros(0), th
        )

    def test_degenerate_prior_limit(self, flat_rate5, five_point_pattern):
        th = flat_rate5.replace_coefficients(sigma=np.array([1e-8]))
        draws = mx.MCDraws.generate(1, 2000, seed=2)
        at_zero = mx.cond_loglik(five_point_pattern, np.zeros(1), th)
        assert mx.marginal_loglik(five_point_pattern, th, draws) == pytest.approx(at_zero, abs=1e-4)

    def test_matches_gauss_hermite_oracle_p1(self, flat_rate5, five_point_pattern):
        draws = mx.MCDraws.generate(1, 10_000, seed=42)
        est = mx.marginal_loglik_with_se(five_point_pattern, flat_rate5, draws)
        oracle = gh_marginal_p1(5.0, five_point_pattern.m, 0.5)
        assert oracle == pytest.approx(GH_P1_RATE5_M5_SIGMA05, abs=1e-12)
        assert abs(est.value - oracle) <= 2 * est.se

    def test_matches_tensor_oracle_p2(self, cubic_setup, five_point_pattern):
        basis, quad, gram, penalty = cubic_setup
        sites = greville_sites(basis.knots, basis.degree, basis.q)
        c2 = np.sqrt(12.0) * (sites - 0.5)  # affine phi2, unit L2 norm, J-orthogonal to phi1=1
        th = make_params(basis, quad, gram, penalty, np.full(basis.q, np.log(5.0)),
                         C=np.column_stack([np.ones(basis.q), c2]), sigma=[0.5, 0.3])
        draws = mx.MCDraws.generate(2, 10_000, seed=4)
        est = mx.marginal_loglik_with_se(five_point_pattern, th, draws)
        oracle = gh_marginal_p2_affine(five_point_pattern.points, 0.5, 0.3, 5.0)
        assert oracle == pytest.approx(GH_P2_RATE5_SIGMAS_05_03, abs=1e-12)
        assert abs(est.value - oracle) <= 2 * est.se

    def test_draw_count_mismatch(self, flat_rate5, five_point_pattern):
        with pytest.raises(ValueError):
            mx.marginal_loglik(five_point_pattern, flat_rate5, mx.MCDraws.generate(2, 10, seed=0))

    def test_fixed_draw_determinism(self, flat_rate5, five_point_pattern):
        draws = mx.MCDraws.generate(1, 500, seed=8)
        a = mx.marginal_loglik(five_point_pattern, flat_rate5, draws)
        b = mx.marginal_loglik(five_point_pattern, flat_rate5, draws)
        assert a == b

    def test_variance_shrinks_as_one_over_s(self, flat_rate5, five_point_pattern):
        sizes = [100, 1000, 10_000]
        variances = []
        for S in sizes:
            vals = [
                mx.marginal_loglik(five_point_pattern, flat_rate5, mx.MCDraws.generate(1, S, seed=(100 + r)))
                for r in range(30)
            ]
            variances.append(np.var(vals, ddof=1))
        slope = np.polyfit(np.log(sizes), np.log(variances), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.2)

    def test_invariant_under_global_sign_flip(self, small_instance):
        theta, ds, draws = small_instance
        flipped = theta.replace_coefficients(C=-theta.C)
        for pat in ds.patterns:
            a = mx.marginal_loglik(pat, theta, draws)
            b = mx.marginal_loglik(pat, flipped, draws)
            assert a == pytest.approx(b, abs=1e-12)

    def test_logsumexp_stable_for_extreme_exponents(self, cubic_setup, five_point_pattern):
        basis, quad, gram, penalty = cubic_setup
        th = make_params(basis, quad, gram, penalty, np.full(basis.q, np.log(600.0)),
                         C=np.ones((basis.q, 1)), sigma=[0.5])
        draws = mx.MCDraws.generate(1, 100, seed=3)
        value = mx.marginal_loglik(five_point_pattern, th, draws)
        assert np.isfinite(value)


class TestPenalizedObjective:
    def test_zero_penalties_give_mean_loglik(self, small_instance):
        theta, ds, draws = small_instance
        obj = mx.penalized_objective(ds, theta, 0.0, 0.0, draws)
        mean_ll = np.mean([mx.marginal_loglik(pat, theta, draws) for pat in ds.patterns])
        assert obj == pytest.approx(mean_ll, abs=1e-12)

    def test_affine_components_have_zero_penalty(self, cubic_setup, five_point_pattern):
        basis, quad, gram, penalty = cubic_setup
        sites = greville_sites(basis.knots, basis.degree, basis.q)
        c0 = 1.0 + 0.5 * sites
        c1 = np.sqrt(12.0) * (sites - 0.5)
        th = make_params(basis, quad, gram, penalty, c0, C=c1[:, None], sigma=[0.5])
        ds = mx.Dataset(domain=basis.domain, patterns=[five_point_pattern])
        draws = mx.MCDraws.generate(1, 100, seed=0)
        assert mx.penalized_objective(ds, th, 10.0, 10.0, draws) == pytest.approx(
            mx.penalized_objective(ds, th, 0.0, 0.0, draws), abs=1e-8
        )

    def test_linear_in_nu1(self, small_instance):
        theta, ds, draws = small_instance
        base = mx.penalized_objective(ds, theta, 0.0, 0.0, draws)
        pen = float(theta.c0 @ theta.penalty.values @ theta.c0)
        v1 = mx.penalized_objective(ds, theta, 0.5, 0.0, draws)
        v2 = mx.penalized_objective(ds, theta, 1.0, 0.0, draws)
        assert v1 == pytest.approx(base - 0.5 * pen, rel=1e-12)
        assert v2 - v1 == pytest.approx(-0.5 * pen, rel=1e-10)


class TestObjectiveGradient:
    def test_matches_finite_differences(self, cubic_setup):
        # random q=6, p=2, n=5 instance per the gradient contract
        dom = mx.ObservationDomain.interval(0.0, 1.0)
        basis = mx.make_bspline_basis(dom, 2, 3)
        quad = basis.default_quadrature()
        gram, penalty = mx.gram_matrix(basis, quad), mx.penalty_matrix(basis, quad)
        rng = np.random.default_rng(17)
        q, p = basis.q, 2
        theta = make_params(basis, quad, gram, penalty,
                            rng.normal(np.log(8.0), 0.3, q), rng.normal(0.0, 0.4, (q, p)), [0.7, 0.4])
        ds = mx.Dataset(domain=dom, patterns=[
            mx.PointPattern(f"r{i}", np.sort(rng.uniform(0, 1, rng.poisson(8)))) for i in range(5)
        ])
        draws = mx.MCDraws.generate(p, 200, seed=23)
        nu1, nu2 = 1e-3, 1e-4

        grad = mx.objective_gradient(ds, theta, nu1, nu2, draws)
        analytic = np.concatenate([grad.c0, grad.C.ravel(), grad.log_sigma])

        def objective_at(x):
            c0 = x[:q]
            C = x[q : q + q * p].reshape(q, p)
            sig = np.exp(x[q + q * p :])
            return mx.penalized_objective(ds, theta.replace_coefficients(c0=c0, C=C, sigma=sig), nu1, nu2, draws)

        x0 = np.concatenate([theta.c0, theta.C.ravel(), np.log(theta.sigma)])
        numeric = central_differences(objective_at, x0)
        assert np.linalg.norm(numeric - analytic) <= 1e-4 * np.linalg.norm(analytic)

    def test_nu1_contribution_is_quadratic_derivative(self, small_instance):
        theta, ds, draws = small_instance
        g0 = mx.objective_gradient(ds, theta, 0.0, 0.0, draws)
        g1 = mx.objective_gradient(ds, theta, 2.5, 0.0, draws)
        expected_shift = -2.0 * 2.5 * theta.penalty.values @ theta.c0
        np.testing.assert_allclose(g1.c0 - g0.c0, expected_shift, rtol=1e-10)

    def test_p0_poisson_score(self, unit_interval):
        # hand-derived GLM score on a q=2 hat basis:
        # grad = mean_i sum_b(i) - integral(beta exp(c0'beta)) - 2 nu1 Omega c0
        basis = mx.make_bspline_basis(unit_interval, 0, 3)
        quad = basis.default_quadrature()
        gram, penalty = mx.gram_matrix(basis, quad), mx.penalty_matrix(basis, quad)
        rng = np.random.default_rng(5)
        theta = make_params(basis, quad, gram, penalty, rng.normal(1.0, 0.2, basis.q))
        ds = mx.Dataset(domain=unit_interval, patterns=[
            mx.PointPattern(f"r{i}", np.sort(rng.uniform(0, 1, 4))) for i in range(3)
        ])
        draws = mx.MCDraws.generate(0, 10, seed=0)
        nu1 = 0.01
        grad = mx.objective_gradient(ds, theta, nu1, 0.0, draws)

        B = mx.eval_basis(basis, quad.nodes)
        lam = np.exp(B @ theta.c0)
        integral_term = B.T @ (quad.weights * lam)
        sum_b = np.mean([mx.eval_basis(basis, pat.points).sum(axis=0) for pat in ds.patterns], axis=0)
        expected = sum_b - integral_term - 2 * nu1 * penalty.values @ theta.c0
        np.testing.assert_allclose(grad.c0, expected, rtol=1e-10, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_prior_sampling_reparameterization_consistency(seed):
    # prior_loglik of u = sigma * z equals the standardized form for any draw
    rng = np.random.default_rng(seed)
    sigma = np.exp(rng.normal(0.0, 1.0, 3))
    z = rng.standard_normal(3)
    lhs = mx.prior_loglik(sigma * z, sigma)
    rhs = float(np.sum(-0.5 * np.log(2 * np.pi * sigma**2) - z**2 / 2))
    assert lhs == pytest.approx(rhs, rel=1e-12)
