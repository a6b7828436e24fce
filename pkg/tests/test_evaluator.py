import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from priorci import evaluator
from priorci.distributions import chi2_pdf, expected_W, t_quantile
from priorci.evaluator import (
    CurveEvaluationError,
    CurveKernel,
    PerformanceCurve,
    ProblemConfig,
    QuadratureError,
    coverage_probability,
    evaluate_curve,
    scaled_expected_length,
    sel_at_zero,
)
from priorci.spline import DFunction, KnotGrid, SplineError

from conftest import FIG_KNOTS, trivial_d

GRID = KnotGrid(FIG_KNOTS)


def random_d(rng, m=1, s_scale=0.35, grid=GRID, alpha=0.05):
    t = t_quantile(m, alpha)
    while True:
        values = t * np.exp(rng.normal(0.0, s_scale, grid.q - 1))
        try:
            return DFunction(grid, tuple(values), t)
        except SplineError:
            continue


# independent oracles: Bessel-function form of the noncentral chi-square
# density and adaptive quadrature


def ncx2_bessel(q, k, lam):
    if q <= 0:
        return 0.0 if k > 2 else (0.5 * math.exp(-lam / 2) if k == 2 else math.inf)
    if lam == 0:
        return math.exp((k / 2 - 1) * math.log(q) - q / 2 - (k / 2) * math.log(2) - math.lgamma(k / 2))
    root = math.sqrt(lam * q)
    # I_v(z) = ive(v, z) e^z folded into the exponent
    log_f = -0.5 * (math.sqrt(q) - math.sqrt(lam)) ** 2 + (k / 4 - 0.5) * math.log(q / lam) - math.log(2)
    return math.exp(log_f) * special.ive(k / 2 - 1, root)


def f_v_scipy(v, s, gamma):
    return 2 * s * v * ncx2_bessel(s * v * v, s, gamma * gamma)


def f_w_scipy(w, m):
    return 2 * m * w * ncx2_bessel(m * w * w, m, 0.0)


def ndtr(x):
    return 0.5 * math.erfc(-x / math.sqrt(2))


def coverage_oracle(d, gamma, m, s, alpha):
    t = t_quantile(m, alpha)

    def inner(x):
        dx = d(x)
        g = lambda w: (ndtr(w * dx) - ndtr(w * t)) * f_v_scipy(x * w, s, gamma) * w * f_w_scipy(w, m)  # noqa: E731
        return integrate.quad(g, 0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=400)[0]

    total = sum(
        integrate.quad(inner, a, b, epsabs=1e-12, epsrel=1e-11, limit=200)[0] for a, b in zip(d.grid.knots, d.grid.knots[1:])
    )
    return 1 - alpha + 2 * total


def sel_oracle(d, gamma, m, s):
    t = d.tail

    def inner(x):
        g = lambda w: f_v_scipy(x * w, s, gamma) * w * w * f_w_scipy(w, m)  # noqa: E731
        return (d(x) - t) * integrate.quad(g, 0, np.inf, epsabs=1e-13, epsrel=1e-11, limit=400)[0]

    total = sum(
        integrate.quad(inner, a, b, epsabs=1e-12, epsrel=1e-11, limit=200)[0] for a, b in zip(d.grid.knots, d.grid.knots[1:])
    )
    return 1 + total / (t * expected_W(m))


FIXED_D = DFunction(GRID, (3.0, 7.4, 12.4, 13.2, 12.8, 13.4), t_quantile(1, 0.05))


class TestAgainstDirectIntegration:
    @pytest.mark.parametrize("gamma", [0.0, 2.0, 6.0])
    def test_coverage(self, gamma):
        got = coverage_probability(FIXED_D, gamma, 1, 3, 0.05)
        assert got == pytest.approx(coverage_oracle(FIXED_D, gamma, 1, 3, 0.05), abs=1e-7)

    @pytest.mark.parametrize("gamma", [0.0, 2.0, 6.0])
    def test_sel(self, gamma):
        got = scaled_expected_length(FIXED_D, gamma, 1, 3, 0.05)
        assert got == pytest.approx(sel_oracle(FIXED_D, gamma, 1, 3), abs=1e-7)

    def test_other_degrees_of_freedom(self):
        d = DFunction(GRID, (3.5, 3.0, 4.0, 4.4, 4.3, 4.35), t_quantile(2, 0.05))
        assert coverage_probability(d, 1.5, 2, 2, 0.05) == pytest.approx(coverage_oracle(d, 1.5, 2, 2, 0.05), abs=1e-7)
        assert scaled_expected_length(d, 1.5, 2, 2) == pytest.approx(sel_oracle(d, 1.5, 2, 2), abs=1e-7)


class TestTrivialDesign:
    @pytest.mark.parametrize("m", [1, 2, 5])
    @pytest.mark.parametrize("s", [1, 3, 7])
    def test_identities(self, m, s):
        d = trivial_d(m)
        for g in (0.0, 1.0, 5.0, 20.0):
            assert coverage_probability(d, g, m, s, 0.05) == pytest.approx(0.95, abs=1e-7)
            assert scaled_expected_length(d, g, m, s) == pytest.approx(1.0, abs=1e-7)
        assert sel_at_zero(d, m, s) == pytest.approx(1.0, abs=1e-12)

    def test_curve_constant(self):
        curve = evaluate_curve(ProblemConfig(1, 3, 0.05, 1.02, trivial_d(), (0.0, 0.5, 3.0, 12.0)))
        np.testing.assert_allclose(curve.coverage, 0.95, atol=1e-9)
        np.testing.assert_allclose(curve.sel_squared, 1.0, atol=1e-9)


class TestClosedForm:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_general_quadrature(self, seed):
        d = random_d(np.random.default_rng(seed))
        assert sel_at_zero(d, 1, 3) == pytest.approx(scaled_expected_length(d, 0.0, 1, 3), abs=1e-9)

    @pytest.mark.parametrize("m,s", [(1, 1), (2, 5), (4, 2)])
    def test_other_dimensions(self, m, s):
        d = random_d(np.random.default_rng(m * 10 + s), m=m)
        assert sel_at_zero(d, m, s) == pytest.approx(sel_oracle(d, 0.0, m, s), abs=1e-9)

    def test_increasing_in_constant_shift(self):
        t = t_quantile(1, 0.05)
        vals = [sel_at_zero(DFunction(GRID, (t + c,) * 6, t), 1, 3) for c in (0.5, 1.0, 2.0)]
        assert 1 < vals[0] < vals[1] < vals[2]


def test_chi_square_half_power_identity():
    for m in (1, 2, 5):
        c = math.sqrt(2) * math.exp(math.lgamma((m + 1) / 2) - math.lgamma(m / 2))
        for z in (0.01, 1.0, 10.0):
            assert math.sqrt(z) * chi2_pdf(z, m) == pytest.approx(c * chi2_pdf(z, m + 1), rel=1e-12)


class TestMonotonicity:
    def pair(self, rng):
        """d1 >= d2 everywhere, with a gap of at least eps on a subinterval."""
        xs = np.linspace(0, 15, 3001)
        for _ in range(1000):
            d2 = random_d(rng, s_scale=0.25)
            # bumps at every free knot: a bump on isolated knots rings negative
            bump = rng.uniform(0.3, 2.0, 6)
            try:
                d1 = d2.with_values(np.array(d2.values) + bump)
            except SplineError:
                continue
            gap = d1(xs) - d2(xs)
            if gap.min() >= 0 and gap.max() > 0.1:
                return d1, d2
        raise AssertionError("no ordered pair found")

    @given(seed=st.integers(0, 2**32 - 1))
    def test_ordered_pairs_stay_ordered(self, seed):
        rng = np.random.default_rng(seed)
        kernel = _kernel()
        d1, d2 = self.pair(rng)
        cov1, cov2 = kernel.coverage(d1), kernel.coverage(d2)
        sel1, sel2 = kernel.sel(d1), kernel.sel(d2)
        assert np.all(sel1 > sel2)
        assert np.all(cov1 > cov2)

    @pytest.mark.parametrize("seed", range(5))
    def test_below_tail_undercovers(self, seed):
        rng = np.random.default_rng(100 + seed)
        t = t_quantile(1, 0.05)
        xs = np.linspace(0, 15, 3001)
        for _ in range(1000):
            values = t - np.abs(rng.normal(0, 3.0, 6))
            try:
                d = DFunction(GRID, tuple(values), t)
            except SplineError:
                continue
            if np.all(d(xs) <= t) and d(0.0) < t:
                break
        else:
            raise AssertionError("no admissible d found")
        assert np.all(_kernel().coverage(d) < 0.95)


_KERNELS = {}


def _kernel():
    if "k" not in _KERNELS:
        _KERNELS["k"] = CurveKernel(FIG_KNOTS, 1, 3, 0.05, [0.0, 1.0, 3.0, 8.0])
    return _KERNELS["k"]


class TestKernel:
    def test_jacobians_by_differences(self):
        kernel = _kernel()
        y = np.array(FIXED_D.values)
        jac = kernel.coverage_jacobian(y)
        sel_jac = kernel.sel_jacobian()
        h = 1e-6
        for i in range(y.size):
            e = np.zeros_like(y)
            e[i] = h
            fd = (kernel.coverage(y + e) - kernel.coverage(y - e)) / (2 * h)
            np.testing.assert_allclose(jac[:, i], fd, rtol=1e-5, atol=1e-9)
            fd_sel = (kernel.sel(y + e) - kernel.sel(y - e)) / (2 * h)
            np.testing.assert_allclose(sel_jac[:, i], fd_sel, rtol=1e-6, atol=1e-10)

    def test_values_and_dfunction_agree(self):
        kernel = _kernel()
        np.testing.assert_allclose(kernel.coverage(FIXED_D), kernel.coverage(np.array(FIXED_D.values)), atol=1e-14)

    def test_rejects_other_knots(self):
        d = trivial_d(knots=(0, 1, 5, 10))
        with pytest.raises(ValueError):
            _kernel().coverage(d)

    def test_tail_mismatch(self):
        with pytest.raises(ValueError):
            coverage_probability(trivial_d(2), 1.0, 1, 3, 0.05)


class TestCurve:
    def test_single_point(self):
        curve = evaluate_curve(ProblemConfig(1, 3, 0.05, 1.02, FIXED_D, (0.0,)))
        assert curve.coverage[0] == pytest.approx(coverage_probability(FIXED_D, 0.0, 1, 3, 0.05), abs=1e-12)
        assert curve.sel_squared[0] == pytest.approx(scaled_expected_length(FIXED_D, 0.0, 1, 3, 0.05) ** 2, abs=1e-12)

    def test_csv(self):
        curve = evaluate_curve(ProblemConfig(1, 3, 0.05, 1.02, FIXED_D, (0.0, 1.0, 2.5)))
        text = curve.to_csv()
        rows = list(csv.reader(io.StringIO(text, newline="")))
        assert rows[0] == ["gamma", "coverage", "sel_squared"]
        assert len(rows) == 4
        assert float(rows[2][1]) == pytest.approx(curve.coverage[1], rel=1e-9)
        assert "\r\n" in text

    def test_round_trip(self):
        curve = PerformanceCurve([0.0, 1.0], [0.95, 0.951], [0.4, 0.6])
        back = PerformanceCurve.from_dict(curve.to_dict())
        np.testing.assert_array_equal(back.sel_squared, curve.sel_squared)

    @pytest.mark.parametrize("grid", [(), (1.0, 2.0), (0.0, 2.0, 1.0), (0.0, 0.0)])
    def test_invalid_grid(self, grid):
        with pytest.raises(ValueError):
            ProblemConfig(1, 3, 0.05, 1.02, FIXED_D, grid)

    def test_failures_collected(self, monkeypatch):
        monkeypatch.setattr(evaluator, "MAX_X_NODES", 20)
        monkeypatch.setattr(evaluator, "MAX_U_NODES", 16)
        with pytest.raises(CurveEvaluationError) as info:
            evaluate_curve(ProblemConfig(1, 3, 0.05, 1.02, FIXED_D, (0.0, 1.0)), tol=1e-16)
        failures = info.value.failures
        assert [i for i, _, _ in failures] == [0, 1]
        assert all(isinstance(exc, QuadratureError) and exc.error_estimate > 0 for _, _, exc in failures)
