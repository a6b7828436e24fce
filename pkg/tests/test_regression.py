import numpy as np
import pytest
from scipy import stats

from priorci.distributions import t_quantile
from priorci.evaluator import coverage_probability
from priorci.regression import (
    DegenerateFitError,
    OrthogonalityError,
    RankDeficiencyError,
    RegressionError,
    RegressionProblem,
    factorial_2_3,
    interval,
    noncentrality_norm,
    summarize,
    summarize_batch,
    yates_design,
)
from priorci.spline import DFunction, KnotGrid

from conftest import FIG_KNOTS, trivial_d

FIXED_D = DFunction(KnotGrid(FIG_KNOTS), (3.0, 7.4, 12.4, 13.2, 12.8, 13.4), t_quantile(1, 0.05))


def orthogonal_problem(rng, n=12, p=4):
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    X = q * np.array([3.0, 2.0, 1.5, 2.5])
    a = np.array([1.0, -2.0, 0.0, 0.0])
    C = np.zeros((p, 2))
    C[2, 0] = C[3, 1] = 1.0
    return RegressionProblem(X, a, C, np.array([0.5, -1.0]))


class TestFactorial:
    def test_yates_order(self):
        lv = yates_design(3)
        assert lv[:4].tolist() == [[-1, -1, -1], [1, -1, -1], [-1, 1, -1], [1, 1, -1]]

    def test_structure(self):
        prob, _ = factorial_2_3(np.arange(8.0), [1.0, 2.0, -1.0])
        np.testing.assert_array_equal(prob.X.T @ prob.X, 8 * np.eye(7))
        np.testing.assert_array_equal(prob.a @ np.linalg.inv(prob.X.T @ prob.X) @ prob.C, 0.0)
        assert prob.v11 == pytest.approx((1 + 4 + 1) / 8, abs=1e-15)
        np.testing.assert_allclose(prob.V22, np.eye(3) / 8, atol=1e-15)

    def test_dimensions(self):
        prob, Y = factorial_2_3(np.random.default_rng(0).standard_normal(8), [1.0, 0.0, 0.0])
        summary = summarize(prob, Y)
        assert (summary.m, summary.s) == (1, 3)

    @pytest.mark.parametrize("resp,a", [(np.zeros(7), [1, 0, 0]), (np.zeros(8), [1, 0])])
    def test_dimension_checks(self, resp, a):
        with pytest.raises(RegressionError):
            factorial_2_3(resp, a)


class TestProblemChecks:
    def test_orthogonality_violation(self, rng):
        X = rng.standard_normal((10, 3))
        with pytest.raises(OrthogonalityError, match="uncorrelated"):
            RegressionProblem(X, [1.0, 0.0, 0.0], np.array([[0.0], [1.0], [0.0]]), [0.0])

    def test_rank_deficient_X(self, rng):
        X = rng.standard_normal((10, 3))
        X[:, 2] = X[:, 0] + X[:, 1]
        with pytest.raises(RankDeficiencyError):
            RegressionProblem(X, [1.0, 0.0, 0.0], np.array([[0.0], [0.0], [1.0]]), [0.0])

    def test_rank_deficient_C(self):
        X = np.eye(4)[:, :3].repeat(2, axis=0)[:7]
        X = np.vstack([X, [1, 1, 1]])
        C = np.array([[0.0, 0.0], [1.0, 2.0], [0.0, 0.0]])
        with pytest.raises(RankDeficiencyError):
            RegressionProblem(X, [1.0, 0.0, 0.0], C, [0.0, 0.0])

    def test_a_in_span_of_C(self):
        X = np.vstack([np.eye(3)] * 3)
        with pytest.raises(RegressionError, match="column space"):
            RegressionProblem(X, [0.0, 2.0, 0.0], np.array([[0.0], [1.0], [0.0]]), [0.0])

    def test_needs_more_rows(self):
        with pytest.raises(RegressionError):
            RegressionProblem(np.eye(3), [1.0, 0.0, 0.0], np.array([[0.0], [1.0], [0.0]]), [0.0])


class TestSummary:
    def test_against_normal_equations(self, rng):
        prob = orthogonal_problem(rng)
        Y = prob.X @ np.array([1.0, 2.0, 0.3, -0.7]) + rng.standard_normal(12)
        beta = np.linalg.solve(prob.X.T @ prob.X, prob.X.T @ Y)
        resid = Y - prob.X @ beta
        summary = summarize(prob, Y)
        assert summary.theta_hat == pytest.approx(prob.a @ beta, rel=1e-12)
        assert summary.sigma2_hat == pytest.approx(resid @ resid / 8, rel=1e-12)
        tau = prob.C.T @ beta - prob.t
        V22 = prob.C.T @ np.linalg.inv(prob.X.T @ prob.X) @ prob.C
        assert summary.F == pytest.approx(tau @ np.linalg.solve(V22, tau) / 2 / summary.sigma2_hat, rel=1e-11)

    def test_exact_fit_rejected(self):
        prob, _ = factorial_2_3(np.zeros(8), [1.0, 0.0, 0.0])
        Y = prob.X @ np.array([1.0, 0.5, 0.2, 0.1, 0.0, 0.0, 0.0])
        with pytest.raises(DegenerateFitError):
            summarize(prob, Y)

    def test_f_distribution(self):
        rng = np.random.default_rng(5)
        prob = orthogonal_problem(rng)
        beta = np.array([1.0, 2.0, 0.5, -1.0])  # C'beta = t
        Y = (prob.X @ beta)[:, None] + rng.standard_normal((12, 10_000))
        _, _, _, F = summarize_batch(prob, Y)
        crit = 1.63 / np.sqrt(F.size)  # Kolmogorov-Smirnov 1% level
        assert stats.kstest(F, stats.f(2, 8).cdf).statistic < crit


class TestInterval:
    def data(self, rng, interactions=(0.0, 0.0, 0.0)):
        beta = np.array([1.0, 0.4, -0.3, 0.8, *interactions])
        prob, _ = factorial_2_3(np.zeros(8), [1.0, 1.0, 0.0])
        return prob, prob.X @ beta + rng.standard_normal(8)

    def test_trivial_d_gives_standard(self, rng):
        prob, Y = self.data(rng)
        rep = interval(summarize(prob, Y), trivial_d())
        assert (rep.lower, rep.upper) == (rep.standard_lower, rep.standard_upper)

    def test_large_F_gives_standard(self, rng):
        prob, Y = self.data(rng, interactions=(40.0, -30.0, 25.0))
        summary = summarize(prob, Y)
        rep = interval(summary, FIXED_D)
        assert rep.used_standard and np.sqrt(summary.F) >= 15
        assert (rep.lower, rep.upper) == (rep.standard_lower, rep.standard_upper)

    def test_zero_F_is_narrower(self, rng):
        prob, Y = self.data(rng)
        s = summarize(prob, Y)
        s0 = type(s)(s.theta_hat, np.zeros(3), s.sigma2_hat, s.v11, s.V22, 0.0, s.m)
        rep = interval(s0, FIXED_D)
        ratio = rep.half_width / (rep.standard_upper - s.theta_hat)
        assert ratio == pytest.approx(FIXED_D(0.0) / FIXED_D.tail, rel=1e-14)
        assert ratio < 1 and not rep.used_standard

    def test_half_width_formula(self, rng):
        prob, Y = self.data(rng)
        s = summarize(prob, Y)
        rep = interval(s, FIXED_D)
        assert rep.half_width == pytest.approx(np.sqrt(s.v11) * s.sigma_hat * FIXED_D(np.sqrt(s.F)), rel=1e-14)
        assert rep.lower <= rep.upper

    def test_equivariance(self, rng):
        prob, Y = self.data(rng)
        base = interval(summarize(prob, Y), FIXED_D)
        scaled = interval(summarize(prob, 3.5 * Y), FIXED_D)
        assert scaled.lower == pytest.approx(3.5 * base.lower, rel=1e-12)
        assert scaled.upper == pytest.approx(3.5 * base.upper, rel=1e-12)


def simulate_pipeline(tau_direction, gamma, reps, seed, d=FIXED_D):
    """Coverage of J(d) over simulated 2^3 experiments with sigma = 1."""
    rng = np.random.default_rng(seed)
    prob, _ = factorial_2_3(np.zeros(8), [1.0, -1.0, 0.5])
    direction = np.asarray(tau_direction, float) / np.linalg.norm(tau_direction)
    # V22 = I/8, so gamma = sqrt(8) tau
    beta = np.concatenate([[2.0, 1.0, 0.5, -0.25], direction * gamma / np.sqrt(8)])
    assert noncentrality_norm(prob, beta, 1.0) == pytest.approx(gamma, abs=1e-12)
    theta = prob.a @ beta
    Y = (prob.X @ beta)[:, None] + rng.standard_normal((8, reps))
    est, _, sigma2, F = summarize_batch(prob, Y)
    half = np.sqrt(prob.v11 * sigma2) * FIXED_D(np.sqrt(F))
    return np.abs(est - theta) <= half


@pytest.mark.parametrize("gamma", [0.5, 2.0, 5.0])
def test_pipeline_matches_evaluator(gamma):
    hit = simulate_pipeline([1.0, 2.0, -0.5], gamma, 200_000, seed=int(gamma * 10))
    se = np.sqrt(0.95 * 0.05 / hit.size)
    assert abs(hit.mean() - coverage_probability(FIXED_D, gamma, 1, 3, 0.05)) < 3.5 * se


def test_depends_only_on_norm():
    a = simulate_pipeline([1.0, 0.0, 0.0], 2.0, 200_000, seed=1)
    b = simulate_pipeline([1.0, 1.0, 1.0], 2.0, 200_000, seed=2)
    pooled = np.sqrt(a.mean() * (1 - a.mean()) / a.size + b.mean() * (1 - b.mean()) / b.size)
    assert abs(a.mean() - b.mean()) / pooled < 3.5
