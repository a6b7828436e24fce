"""Coverage probability and scaled expected length of J(d).

Both quantities are double integrals over x in [0, k] (split at the knots)
and over W = sqrt(chi2_m / m).  The W-integral is moved onto [0, 1] by the
probability integral transform: the weight ``w f_W(w) dw`` is proportional to
the chi2_{m+1} law of ``m w**2`` and ``w**2 f_W(w) dw`` is exactly the
chi2_{m+2} law.  Gauss-Legendre rules are used in both directions.

The noncentral density f_V(x w; gamma) depends on the knots and gamma but not
on the knot values, so :class:`CurveKernel` tabulates it once; after that a
coverage evaluation is a contraction against Phi(w d(x)) - Phi(w t(m)) and the
scaled expected length is linear in d.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import (
    chi2_inverse_cdf,
    density_V,
    expected_W,
    log_expected_W,
    normal_pdf,
    t_quantile,
)
from .spline import DFunction, spline_basis

__all__ = [
    "QuadratureError",
    "CurveEvaluationError",
    "ProblemConfig",
    "PerformanceCurve",
    "CurveKernel",
    "coverage_probability",
    "scaled_expected_length",
    "sel_at_zero",
    "evaluate_curve",
    "DEFAULT_X_NODES",
    "DEFAULT_U_NODES",
]

DEFAULT_X_NODES = 20  # per knot interval
DEFAULT_U_NODES = 8  # per graded panel
MAX_X_NODES = 160
MAX_U_NODES = 64
U_GRADING = 40
CONVERGENCE_TOL = 1e-8


class QuadratureError(ArithmeticError):
    """Node doubling hit its cap before successive estimates agreed."""

    def __init__(self, message, error_estimate):
        super().__init__(f"{message} (achieved error estimate {error_estimate:.3g})")
        self.error_estimate = error_estimate


class CurveEvaluationError(RuntimeError):
    def __init__(self, failures):
        self.failures = failures
        listing = ", ".join(f"#{i} (gamma={g}): {e}" for i, g, e in failures)
        super().__init__(f"curve evaluation failed at {listing}")


def _worker_count() -> int:
    try:
        cap = int(os.environ.get("CI_DESIGNER_THREADS", "0"))
    except ValueError:
        cap = 0
    n = os.cpu_count() or 1
    return max(1, min(n, cap) if cap > 0 else n)


@dataclass(frozen=True)
class ProblemConfig:
    m: int
    s: int
    alpha: float
    ell: float
    d_spec: DFunction
    gamma_grid: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        if self.m < 1 or self.s < 1:
            raise ValueError("m and s must be positive integers")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not self.ell >= 1:
            raise ValueError("ell must be at least 1")
        g = self.gamma_grid
        if not g or g[0] != 0.0 or any(b <= a for a, b in zip(g, g[1:])):
            raise ValueError("gamma grid must start at 0 and be strictly increasing")


@dataclass
class PerformanceCurve:
    gamma: np.ndarray
    coverage: np.ndarray
    sel_squared: np.ndarray

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.coverage = np.asarray(self.coverage, dtype=float)
        self.sel_squared = np.asarray(self.sel_squared, dtype=float)
        if not (self.gamma.shape == self.coverage.shape == self.sel_squared.shape):
            raise ValueError("curve arrays must have equal lengths")

    def to_csv(self) -> str:
        lines = ["gamma,coverage,sel_squared"]
        for g, c, e in zip(self.gamma, self.coverage, self.sel_squared):
            lines.append(f"{g:.10g},{c:.10g},{e:.10g}")
        return "\r\n".join(lines) + "\r\n"

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma.tolist(),
            "coverage": self.coverage.tolist(),
            "sel_squared": self.sel_squared.tolist(),
        }

    @classmethod
    def from_dict(cls, data) -> "PerformanceCurve":
        return cls(data["gamma"], data["coverage"], data["sel_squared"])


def _gauss_legendre(a, b, n):
    t, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * t + 0.5 * (b + a), 0.5 * (b - a) * w


def _x_rule(knots, n):
    xs, ws = zip(*(_gauss_legendre(a, b, n) for a, b in zip(knots, knots[1:])))
    return np.concatenate(xs), np.concatenate(ws)


def _u_rule(n):
    """Composite Gauss-Legendre on [0, 1 - 2**-40], panels halving toward both ends.

    The integrands behave like powers of u near 0 (w ~ u**(1/(m+1))) and
    change on a scale of exp(-1/x**2) near u = 1, so uniform rules converge
    slowly there.
    """
    breaks = [0.0] + [2.0**-b for b in range(U_GRADING, 0, -1)] + [1.0 - 2.0**-b for b in range(2, U_GRADING + 1)]
    us, ws = zip(*(_gauss_legendre(a, b, n) for a, b in zip(breaks, breaks[1:])))
    return np.concatenate(us), np.concatenate(ws)


def _w_rule(df, m, n):
    """Nodes w and weights for E[h(W')] where m W'^2 ~ chi2_df."""
    u, wu = _u_rule(n)
    return np.sqrt(chi2_inverse_cdf(u, df) / m), wu


class CurveKernel:
    """Tabulated quadrature for coverage and scaled expected length on a gamma grid.

    The kernel is fixed by the knots, (m, s, alpha), the gamma values and the
    node counts; any DFunction on the same knots can then be evaluated.
    """

    def __init__(self, knots, m, s, alpha, gammas, x_nodes=DEFAULT_X_NODES, u_nodes=DEFAULT_U_NODES):
        self.knots = tuple(float(x) for x in knots)
        self.m, self.s, self.alpha = int(m), int(s), float(alpha)
        self.gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        if np.any(self.gammas < 0):
            raise ValueError("gamma values must be nonnegative")
        self.x_nodes, self.u_nodes = int(x_nodes), int(u_nodes)
        self.tail = t_quantile(self.m, self.alpha)
        self.mean_w = expected_W(self.m)

        self.x, wx = _x_rule(self.knots, self.x_nodes)
        self.w_cov, wu_cov = _w_rule(self.m + 1, self.m, self.u_nodes)
        self.w_sel, wu_sel = _w_rule(self.m + 2, self.m, self.u_nodes)

        v_cov = np.multiply.outer(self.x, self.w_cov)
        v_sel = np.multiply.outer(self.x, self.w_sel)

        def tabulate(g):
            fc = density_V(v_cov, self.s, g)
            fs = density_V(v_sel, self.s, g)
            return fc, fs @ wu_sel

        workers = _worker_count()
        if workers > 1 and self.gammas.size > 1:
            with ThreadPoolExecutor(workers) as pool:
                tables = list(pool.map(tabulate, self.gammas))
        else:
            tables = [tabulate(g) for g in self.gammas]

        # coverage weights: 2 E(W) wx wu f_V(x w)
        self._cov = np.stack([t[0] for t in tables]) * (2.0 * self.mean_w * wx[:, None] * wu_cov[None, :])
        # SEL weights: wx / (t E(W)) * E[f_V(x W'')]
        self._sel = np.stack([t[1] for t in tables]) * (wx / (self.tail * self.mean_w))
        self._phi_tail = special.ndtr(self.w_cov * self.tail)
        self._basis = None

    def _check(self, d: DFunction):
        if d.grid.knots != self.knots:
            raise ValueError("DFunction knots differ from the kernel's knots")
        if abs(d.tail - self.tail) > 1e-9 * self.tail:
            raise ValueError("DFunction tail differs from t(m) for this kernel")

    @property
    def basis(self) -> np.ndarray:
        """Spline basis at the x nodes restricted to the free knot values."""
        if self._basis is None:
            self._basis = spline_basis(self.knots, self.x)
        return self._basis[:, :-1]

    def nodes_from_values(self, values) -> np.ndarray:
        """d at the x nodes for free knot values ``values`` (d(k) = t(m))."""
        self.basis
        return self._basis @ np.append(np.asarray(values, dtype=float), self.tail)

    def _nodes(self, d):
        if isinstance(d, DFunction):
            self._check(d)
            return d(self.x)
        return self.nodes_from_values(d)

    def coverage(self, d) -> np.ndarray:
        """Coverage at each kernel gamma for a DFunction or a vector of free knot values."""
        dx = self._nodes(d)
        diff = special.ndtr(np.multiply.outer(dx, self.w_cov)) - self._phi_tail
        return 1.0 - self.alpha + np.tensordot(self._cov, diff, axes=([1, 2], [0, 1]))

    def coverage_jacobian(self, d) -> np.ndarray:
        """Derivative of coverage with respect to the free knot values, shape (n_gamma, q-1)."""
        dx = self._nodes(d)
        deriv = self.w_cov * normal_pdf(np.multiply.outer(dx, self.w_cov))
        return np.einsum("gxu,xu->gx", self._cov, deriv) @ self.basis

    def sel(self, d) -> np.ndarray:
        return 1.0 + self._sel @ (self._nodes(d) - self.tail)

    def sel_jacobian(self) -> np.ndarray:
        return self._sel @ self.basis


def _refine(compute, x_nodes, u_nodes, tol, label):
    """Double node counts until successive results agree to ``tol``."""
    prev = compute(x_nodes, u_nodes)
    err = math.inf
    while x_nodes < MAX_X_NODES or u_nodes < MAX_U_NODES:
        x_nodes = min(2 * x_nodes, MAX_X_NODES)
        u_nodes = min(2 * u_nodes, MAX_U_NODES)
        cur = compute(x_nodes, u_nodes)
        err = float(np.max(np.abs(cur - prev)))
        if err < tol:
            return cur
        prev = cur
    raise QuadratureError(f"{label} quadrature did not converge", err)


def coverage_probability(d: DFunction, gamma, m, s, alpha, tol=CONVERGENCE_TOL):
    """P(theta in J(d)) at noncentrality norm ``gamma``."""
    _check_tail(d, m, alpha)
    return float(
        _refine(
            lambda nx, nu: CurveKernel(d.grid.knots, m, s, alpha, [gamma], nx, nu).coverage(d)[0],
            DEFAULT_X_NODES,
            DEFAULT_U_NODES,
            tol,
            "coverage",
        )
    )


def scaled_expected_length(d: DFunction, gamma, m, s, alpha=None, tol=CONVERGENCE_TOL):
    """e(gamma; d): expected length of J(d) over that of the standard interval.

    ``alpha`` is implied by ``d.tail`` when omitted.
    """
    alpha = _alpha_from_tail(d, m) if alpha is None else alpha
    _check_tail(d, m, alpha)
    return float(
        _refine(
            lambda nx, nu: CurveKernel(d.grid.knots, m, s, alpha, [gamma], nx, nu).sel(d)[0],
            DEFAULT_X_NODES,
            DEFAULT_U_NODES,
            tol,
            "scaled expected length",
        )
    )


def _closed_form_log_const(m, s, tail):
    return (
        1.5 * math.log(2.0)
        + 0.5 * s * math.log(s)
        + math.lgamma(0.5 * (s + m + 1))
        - math.log(tail)
        - log_expected_W(m)
        - math.lgamma(0.5 * m)
        - math.lgamma(0.5 * s)
    )


def sel_at_zero(d: DFunction, m, s, x_nodes=DEFAULT_X_NODES, tol=1e-11):
    """Closed-form e(0; d): one-dimensional integral over [0, k] split at the knots."""
    m, s = int(m), int(s)
    tail = d.tail

    def integral(n):
        x, c = sel_at_zero_weights(d.grid.knots, m, s, tail, n)
        return float(np.sum(c * (d(x) - tail)))

    prev = integral(x_nodes)
    while True:
        x_nodes *= 2
        cur = integral(x_nodes)
        if abs(cur - prev) < tol or x_nodes >= MAX_X_NODES:
            if abs(cur - prev) >= tol:
                raise QuadratureError("closed-form objective did not converge", abs(cur - prev))
            return 1.0 + cur
        prev = cur


def sel_at_zero_weights(knots, m, s, tail, x_nodes=DEFAULT_X_NODES):
    """Vector c with e(0; d) = 1 + c @ (d(x_nodes) - tail), plus the nodes."""
    m, s = int(m), int(s)
    log_const = _closed_form_log_const(m, s, tail)
    x, wx = _x_rule(knots, x_nodes)
    log_kernel = special.xlogy(s - 1.0, x) + 0.5 * m * math.log(m) - 0.5 * (s + m + 1) * np.log(s * x * x + m)
    return x, wx * np.exp(log_kernel + log_const)


def evaluate_curve(config: ProblemConfig, x_nodes=None, u_nodes=None, tol=CONVERGENCE_TOL) -> PerformanceCurve:
    """Coverage and squared scaled expected length at every grid point.

    With explicit node counts a single kernel is used; otherwise each grid
    point is refined independently and failures are collected with their
    indices.
    """
    d = config.d_spec
    _check_tail(d, config.m, config.alpha)
    gammas = np.asarray(config.gamma_grid)
    if x_nodes is not None and u_nodes is not None:
        kernel = CurveKernel(d.grid.knots, config.m, config.s, config.alpha, gammas, x_nodes, u_nodes)
        return PerformanceCurve(gammas, kernel.coverage(d), kernel.sel(d) ** 2)

    cov = np.empty(gammas.size)
    sel = np.empty(gammas.size)
    failures = []
    for i, g in enumerate(gammas):
        try:
            cov[i] = coverage_probability(d, g, config.m, config.s, config.alpha, tol)
            sel[i] = scaled_expected_length(d, g, config.m, config.s, config.alpha, tol)
        except (QuadratureError, FloatingPointError) as exc:
            failures.append((i, float(g), exc))
    if failures:
        raise CurveEvaluationError(failures)
    return PerformanceCurve(gammas, cov, sel**2)


def _alpha_from_tail(d: DFunction, m) -> float:
    return float(2.0 * special.stdtr(int(m), -d.tail))


def _check_tail(d: DFunction, m, alpha):
    expected = t_quantile(m, alpha)
    if abs(d.tail - expected) > 1e-9 * expected:
        raise ValueError(f"d.tail={d.tail!r} is not t(m)={expected!r} for m={m}, alpha={alpha}")
