"""From regression data to the interval J(d).

The method needs the estimators of theta = a'beta and tau = C'beta - t to be
uncorrelated, i.e. a'(X'X)^{-1}C = 0; this is checked and violations raise
:class:`OrthogonalityError` rather than falling back to something else.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .distributions import t_quantile
from .spline import DFunction

__all__ = [
    "RegressionError",
    "RankDeficiencyError",
    "OrthogonalityError",
    "DegenerateFitError",
    "RegressionProblem",
    "DataSummary",
    "IntervalReport",
    "summarize",
    "summarize_batch",
    "interval",
    "factorial_2_3",
    "yates_design",
    "noncentrality_norm",
]

ORTHOGONALITY_RTOL = 1e-10


class RegressionError(ValueError):
    pass


class RankDeficiencyError(RegressionError):
    pass


class OrthogonalityError(RegressionError):
    pass


class DegenerateFitError(RegressionError):
    """Residual sum of squares is zero, so sigma cannot be estimated."""


def _rank(r_diag, scale):
    tol = max(r_diag.shape) * np.finfo(float).eps * scale
    return int(np.sum(np.abs(r_diag) > tol))


@dataclass(frozen=True, eq=False)
class RegressionProblem:
    X: np.ndarray
    a: np.ndarray
    C: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        a = np.asarray(self.a, dtype=float).ravel()
        C = np.asarray(self.C, dtype=float)
        C = C.reshape(-1, 1) if C.ndim == 1 else C
        t = np.asarray(self.t, dtype=float).ravel()
        n, p = X.shape
        if a.size != p or C.shape[0] != p or t.size != C.shape[1]:
            raise RegressionError(f"dimension mismatch: X {X.shape}, a {a.shape}, C {C.shape}, t {t.shape}")
        if not C.shape[1] < p:
            raise RegressionError("C must have fewer columns than X")
        if n <= p:
            raise RegressionError("need more observations than parameters (n > p)")
        if not np.any(a):
            raise RegressionError("a must be nonzero")

        q, r = np.linalg.qr(X)
        if _rank(np.diag(r), np.max(np.abs(np.diag(r)))) < p:
            raise RankDeficiencyError("columns of X are linearly dependent")
        rc = np.linalg.qr(C, mode="r")
        if _rank(np.diag(rc), max(np.max(np.abs(np.diag(rc))), 1e-300)) < C.shape[1]:
            raise RankDeficiencyError("columns of C are linearly dependent")
        coef, *_ = np.linalg.lstsq(C, a, rcond=None)
        if np.linalg.norm(C @ coef - a) <= 1e-10 * np.linalg.norm(a):
            raise RegressionError("a lies in the column space of C")

        # (X'X)^{-1} = R^{-1} R^{-T}
        r_inv = np.linalg.solve(r, np.eye(p))
        xtx_inv = r_inv @ r_inv.T
        cross = a @ xtx_inv @ C
        scale = np.linalg.norm(a) * np.linalg.norm(C) * np.linalg.norm(xtx_inv, 2)
        if np.max(np.abs(cross)) > ORTHOGONALITY_RTOL * scale:
            raise OrthogonalityError(
                f"a'(X'X)^-1 C = {np.array2string(cross, precision=6)} is not zero; "
                "the interval requires uncorrelated estimators of theta and tau"
            )
        for name, val in (("X", X), ("a", a), ("C", C), ("t", t)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_q", q)
        object.__setattr__(self, "_r", r)
        object.__setattr__(self, "_xtx_inv", xtx_inv)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def s(self) -> int:
        return self.C.shape[1]

    @property
    def m(self) -> int:
        return self.n - self.p

    @property
    def v11(self) -> float:
        return float(self.a @ self._xtx_inv @ self.a)

    @property
    def V22(self) -> np.ndarray:
        return self.C.T @ self._xtx_inv @ self.C

    def solve(self, Y):
        """Least-squares coefficients for Y of shape (n,) or (n, r)."""
        return np.linalg.solve(self._r, self._q.T @ Y)


@dataclass(frozen=True)
class DataSummary:
    theta_hat: float
    tau_hat: np.ndarray
    sigma2_hat: float
    v11: float
    V22: np.ndarray
    F: float
    m: int

    @property
    def s(self) -> int:
        return int(np.size(self.tau_hat))

    @property
    def sigma_hat(self) -> float:
        return float(np.sqrt(self.sigma2_hat))


@dataclass(frozen=True)
class IntervalReport:
    lower: float
    upper: float
    half_width: float
    standard_lower: float
    standard_upper: float
    used_standard: bool
    sqrt_F: float

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "half_width": self.half_width,
            "standard_lower": self.standard_lower,
            "standard_upper": self.standard_upper,
            "used_standard": self.used_standard,
            "sqrt_F": self.sqrt_F,
        }


def summarize(problem: RegressionProblem, Y) -> DataSummary:
    Y = np.asarray(Y, dtype=float).ravel()
    if Y.size != problem.n:
        raise RegressionError(f"Y has {Y.size} entries, expected {problem.n}")
    theta, tau, sigma2, F = summarize_batch(problem, Y[:, None])
    if not sigma2[0] > 0:
        raise DegenerateFitError("residual sum of squares is zero; sigma^2 estimate is degenerate")
    return DataSummary(
        theta_hat=float(theta[0]),
        tau_hat=tau[:, 0],
        sigma2_hat=float(sigma2[0]),
        v11=problem.v11,
        V22=problem.V22,
        F=float(F[0]),
        m=problem.m,
    )


def summarize_batch(problem: RegressionProblem, Y):
    """Vectorized statistics for the columns of Y (shape (n, r)).

    Returns (theta_hat, tau_hat, sigma2_hat, F) with tau_hat of shape (s, r).
    sigma2_hat is set to zero when the residuals are at roundoff level, and F
    is nan there.
    """
    Y = np.asarray(Y, dtype=float)
    beta = problem.solve(Y)
    resid = Y - problem.X @ beta
    rss = np.sum(resid * resid, axis=0)
    floor = (problem.n * np.finfo(float).eps) ** 2 * np.sum(Y * Y, axis=0)
    sigma2 = np.where(rss > floor, rss, 0.0) / problem.m
    theta = problem.a @ beta
    tau = problem.C.T @ beta - problem.t[:, None]
    quad = np.sum(tau * np.linalg.solve(problem.V22, tau), axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(sigma2 > 0, quad / problem.s / sigma2, np.nan)
    return theta, tau, sigma2, F


def interval(summary: DataSummary, d: DFunction) -> IntervalReport:
    """J(d) = theta_hat -/+ sqrt(v11) sigma_hat d(sqrt(F)), with the standard interval alongside."""
    if not summary.sigma2_hat > 0:
        raise DegenerateFitError("sigma^2 estimate must be positive")
    root_f = float(np.sqrt(summary.F))
    scale = np.sqrt(summary.v11) * summary.sigma_hat
    half = float(scale * d(root_f))
    std_half = float(scale * d.tail)
    return IntervalReport(
        lower=summary.theta_hat - half,
        upper=summary.theta_hat + half,
        half_width=half,
        standard_lower=summary.theta_hat - std_half,
        standard_upper=summary.theta_hat + std_half,
        used_standard=root_f >= d.k,
        sqrt_F=root_f,
    )


def yates_design(factors=3) -> np.ndarray:
    """Coded +/-1 levels in standard (Yates) order; first factor changes fastest."""
    rows = [tuple(reversed(levels)) for levels in itertools.product((-1.0, 1.0), repeat=factors)]
    return np.array(rows)


def factorial_2_3(responses, a):
    """Model for an unreplicated 2^3 experiment with the three-factor interaction dropped.

    Columns: intercept, x1, x2, x3, x1x2, x1x3, x2x3.  theta = a1 b1 + a2 b2 + a3 b3
    and tau = (b12, b13, b23), so n - p = 1 and s = 3.
    """
    Y = np.asarray(responses, dtype=float).ravel()
    if Y.size != 8:
        raise RegressionError("a 2^3 experiment has 8 responses")
    a = np.asarray(a, dtype=float).ravel()
    if a.size != 3:
        raise RegressionError("a must have 3 entries (one per main effect)")
    lv = yates_design(3)
    x1, x2, x3 = lv.T
    X = np.column_stack([np.ones(8), x1, x2, x3, x1 * x2, x1 * x3, x2 * x3])
    C = np.zeros((7, 3))
    C[4:, :] = np.eye(3)
    a_full = np.concatenate([[0.0], a, np.zeros(3)])
    return RegressionProblem(X, a_full, C, np.zeros(3)), Y


def noncentrality_norm(problem: RegressionProblem, beta, sigma) -> float:
    """|gamma| with gamma = (1/sigma) V22^{-1/2} (C'beta - t)."""
    tau = problem.C.T @ np.asarray(beta, dtype=float) - problem.t
    vals, vecs = np.linalg.eigh(problem.V22)
    inv_root = vecs @ np.diag(vals**-0.5) @ vecs.T
    return float(np.linalg.norm(inv_root @ tau) / sigma)


def standard_half_width(summary: DataSummary, alpha) -> float:
    return float(t_quantile(summary.m, alpha) * np.sqrt(summary.v11) * summary.sigma_hat)
