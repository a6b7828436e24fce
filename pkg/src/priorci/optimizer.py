"""Choosing the knot values of d.

Minimize e(0; d) over d(x_1), ..., d(x_{q-1}) subject to

* coverage >= 1 - alpha on a finite set of gamma values,
* scaled expected length <= ell on a denser set,
* d bounded away from zero on [0, k].

The objective and the length constraints are linear in the knot values and
the coverage constraints are smooth, so SLSQP is used with exact Jacobians
of the discretized integrals (forward differences with ``gradient="fd"``)
and seeded random restarts.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .distributions import t_quantile
from .evaluator import (
    DEFAULT_U_NODES,
    DEFAULT_X_NODES,
    CurveKernel,
    PerformanceCurve,
    _worker_count,
    sel_at_zero,
    sel_at_zero_weights,
)
from .spline import DFunction, KnotGrid, SplineError, spline_basis

__all__ = [
    "DesignProblem",
    "DesignResult",
    "DesignError",
    "design_d",
    "sweep_s",
    "default_constraint_gammas",
    "default_audit_gammas",
    "candidate_grids",
    "SweepRow",
]

log = logging.getLogger(__name__)

COVERAGE_TOL = 5e-4
SEL_SQ_TOL = 2e-3
TAIL_TOL = 1e-3
LOWER_BOUND_FRACTION = 0.05
KNOT_PATTERN = (0, 1, 2, 3, 7, 12, 15)
CANDIDATE_KS = (10.0, 12.0, 15.0, 18.0)

# SLSQP sees coverage slack in units of 1e-4 so its feasibility tolerance bites
_COVERAGE_SCALE = 1e4
# coverage tends to 1 - alpha for every d as gamma grows, so the large-gamma
# constraints are active with vanishing gradients; a tiny slack keeps SLSQP
# from stalling on them
_COVERAGE_SLACK = 1e-9
_POSITIVITY_SAMPLES = 32
_MAX_AUDIT_ROUNDS = 3


class DesignError(RuntimeError):
    """The design problem cannot be started (for example an infeasible initial d)."""


def default_constraint_gammas() -> tuple[float, ...]:
    base = [0.25 * i for i in range(41)]
    return tuple(base + [12.0, 15.0, 20.0])


def default_audit_gammas(constraint_gammas=None) -> tuple[float, ...]:
    g = sorted(set(constraint_gammas or default_constraint_gammas()))
    mids = [0.5 * (a + b) for a, b in zip(g, g[1:])]
    extra = [x for x in (25.0, 30.0) if x > g[-1]]
    return tuple(sorted(set(g) | set(mids) | set(extra)))


def extrapolated_gammas(gammas) -> tuple[float, ...]:
    top = max(gammas)
    return tuple(top * f for f in (1.5, 2.0, 3.0, 4.0, 5.0))


@dataclass(frozen=True)
class DesignProblem:
    m: int
    s: int
    alpha: float
    ell: float
    grid: KnotGrid
    initial_values: tuple[float, ...] | None = None
    constraint_gammas: tuple[float, ...] = field(default_factory=default_constraint_gammas)
    sel_check_gammas: tuple[float, ...] | None = None
    seed: int = 0
    n_starts: int = 5
    maxiter: int = 300
    x_nodes: int = DEFAULT_X_NODES
    u_nodes: int = DEFAULT_U_NODES
    gradient: str = "analytic"

    def __post_init__(self):
        cg = tuple(sorted(set(float(g) for g in self.constraint_gammas)))
        object.__setattr__(self, "constraint_gammas", cg)
        sg = self.sel_check_gammas
        sg = default_audit_gammas(cg) if sg is None else tuple(sorted(set(float(g) for g in sg) | set(cg)))
        object.__setattr__(self, "sel_check_gammas", sg)
        if cg[0] != 0.0:
            raise ValueError("constraint gammas must include 0")
        if not self.ell >= 1:
            raise ValueError("ell must be at least 1")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.m < 1 or self.s < 1:
            raise ValueError("m and s must be positive integers")
        if self.gradient not in ("analytic", "fd"):
            raise ValueError("gradient must be 'analytic' or 'fd'")
        if self.initial_values is not None and len(self.initial_values) != self.grid.q - 1:
            raise ValueError(f"initial_values needs {self.grid.q - 1} entries")

    @property
    def tail(self) -> float:
        return t_quantile(self.m, self.alpha)


@dataclass
class DesignResult:
    d: DFunction
    objective: float
    audit: PerformanceCurve
    converged: bool
    iterations: int
    feasible: bool = True
    violations: list = field(default_factory=list)
    tail_check: PerformanceCurve | None = None
    tail_settled: bool = True
    quadrature_error: float = 0.0
    message: str = ""

    @property
    def min_sq_sel(self) -> float:
        return self.objective**2

    def summary(self) -> dict:
        return {
            "min_sq_sel": self.objective**2,
            "max_sq_sel": float(np.max(self.audit.sel_squared)),
            "min_cp": float(np.min(self.audit.coverage)),
            "max_cp": float(np.max(self.audit.coverage)),
        }

    def to_dict(self) -> dict:
        return {
            "d": self.d.to_dict(),
            "objective": float(self.objective),
            "audit": self.audit.to_dict(),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "feasible": bool(self.feasible),
            "violations": [[float(g), str(kind), float(v)] for g, kind, v in self.violations],
            "tail_check": None if self.tail_check is None else self.tail_check.to_dict(),
            "tail_settled": bool(self.tail_settled),
            "quadrature_error": float(self.quadrature_error),
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, data) -> "DesignResult":
        tail = data.get("tail_check")
        return cls(
            d=DFunction.from_dict(data["d"]),
            objective=data["objective"],
            audit=PerformanceCurve.from_dict(data["audit"]),
            converged=data["converged"],
            iterations=data["iterations"],
            feasible=data.get("feasible", True),
            violations=[tuple(v) for v in data.get("violations", [])],
            tail_check=None if tail is None else PerformanceCurve.from_dict(tail),
            tail_settled=data.get("tail_settled", True),
            quadrature_error=data.get("quadrature_error", 0.0),
            message=data.get("message", ""),
        )


class _Solver:
    """One SLSQP formulation on fixed kernels."""

    def __init__(self, problem: DesignProblem, coverage_gammas):
        p = problem
        self.problem = p
        self.tail = p.tail
        knots = p.grid.knots
        self.cov_kernel = CurveKernel(knots, p.m, p.s, p.alpha, coverage_gammas, p.x_nodes, p.u_nodes)
        self.sel_kernel = CurveKernel(knots, p.m, p.s, p.alpha, p.sel_check_gammas, p.x_nodes, p.u_nodes)
        x0, c0 = sel_at_zero_weights(knots, p.m, p.s, self.tail, 4 * p.x_nodes)
        b0 = spline_basis(knots, x0)
        self.obj_grad = c0 @ b0[:, :-1]
        self.obj_const = 1.0 + c0 @ (b0[:, -1] * self.tail - self.tail)
        xs = np.concatenate(
            [np.linspace(a, b, _POSITIVITY_SAMPLES, endpoint=False)[1:] for a, b in zip(knots, knots[1:])]
        )
        bp = spline_basis(knots, xs)
        self.pos_A = bp[:, :-1]
        self.pos_b = bp[:, -1] * self.tail - LOWER_BOUND_FRACTION * self.tail
        self.sel_A = -self.sel_kernel.sel_jacobian()
        self.sel_b = p.ell - self.sel_kernel.sel(np.zeros(p.grid.q - 1))
        self.one_minus_alpha = 1.0 - p.alpha - _COVERAGE_SLACK

    def objective(self, y):
        return float(self.obj_const + self.obj_grad @ y)

    def constraints(self, exact=True):
        target = self.one_minus_alpha
        ker = self.cov_kernel
        cons = [
            {
                "type": "ineq",
                "fun": lambda y: _COVERAGE_SCALE * (ker.coverage(y) - target),
                "jac": lambda y: _COVERAGE_SCALE * ker.coverage_jacobian(y),
            },
            {"type": "ineq", "fun": lambda y: self.sel_b + self.sel_A @ y, "jac": lambda y: self.sel_A},
            {"type": "ineq", "fun": lambda y: self.pos_b + self.pos_A @ y, "jac": lambda y: self.pos_A},
        ]
        if not exact:
            for c in cons:
                del c["jac"]
        return cons

    def violation(self, y):
        cov = np.min(self.cov_kernel.coverage(y)) - self.one_minus_alpha
        sel = np.min(self.sel_b + self.sel_A @ y)
        pos = np.min(self.pos_b + self.pos_A @ y)
        return max(0.0, -cov, -sel, -pos)

    def solve(self, y0):
        lb = LOWER_BOUND_FRACTION * self.tail
        exact = self.problem.gradient == "analytic"
        options = {"maxiter": self.problem.maxiter, "ftol": 1e-12}
        if not exact:
            options["finite_diff_rel_step"] = 1e-5
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
            return minimize(
                self.objective,
                y0,
                jac=(lambda y: self.obj_grad) if exact else None,
                method="SLSQP",
                bounds=[(lb, None)] * len(y0),
                constraints=self.constraints(exact),
                options=options,
            )


def _starts(problem: DesignProblem, tail):
    q1 = problem.grid.q - 1
    base = np.full(q1, tail) if problem.initial_values is None else np.asarray(problem.initial_values, float)
    rng = np.random.default_rng(problem.seed)
    starts = [base]
    for _ in range(max(0, problem.n_starts - 1)):
        factor = np.exp(rng.normal(0.0, 0.25, q1))
        starts.append(np.maximum(base * factor, 2 * LOWER_BOUND_FRACTION * tail))
    return starts


def design_d(problem: DesignProblem) -> DesignResult:
    """Solve the constrained minimization, then audit the result off-grid.

    Coverage violations found on the audit grid are added to the constraint
    set and the problem is re-solved from the current best point, at most
    three times.
    """
    tail = problem.tail
    if problem.initial_values is not None:
        try:
            DFunction(problem.grid, tuple(problem.initial_values), tail)
        except SplineError as exc:
            raise DesignError(f"infeasible initial d: {exc}") from exc

    coverage_gammas = list(problem.constraint_gammas)
    starts = _starts(problem, tail)
    iterations = 0
    best = None
    for round_ in range(_MAX_AUDIT_ROUNDS + 1):
        solver = _Solver(problem, coverage_gammas)
        for y0 in starts:
            res = solver.solve(y0)
            iterations += int(res.nit)
            viol = solver.violation(res.x)
            ok = bool(viol <= 1e-9)
            log.debug("start %s: obj=%.8f viol=%.3g status=%s", y0, res.fun, viol, res.message)
            key = (not ok, res.fun if ok else viol)
            if best is None or key < best[0]:
                best = (key, res.x.copy(), bool(res.success) and ok, res.message)
        _, y_best, converged, message = best
        d = DFunction(problem.grid, tuple(y_best), tail)
        audit = _audit(problem, d)
        bad = [g for g, c in zip(audit.gamma, audit.coverage) if c < 1.0 - problem.alpha - 1e-8]
        new = [g for g in bad if g not in coverage_gammas]
        if not new or round_ == _MAX_AUDIT_ROUNDS:
            break
        log.info("audit found coverage below target at gamma=%s; re-solving", new)
        coverage_gammas = sorted(set(coverage_gammas) | set(new))
        starts = [y_best]
        best = None

    return _finish(problem, d, audit, converged, iterations, str(message))


def _audit(problem: DesignProblem, d: DFunction) -> PerformanceCurve:
    kernel = CurveKernel(
        d.grid.knots, problem.m, problem.s, problem.alpha, problem.sel_check_gammas, problem.x_nodes, problem.u_nodes
    )
    return PerformanceCurve(kernel.gammas, kernel.coverage(d), kernel.sel(d) ** 2)


def _finish(problem, d, audit, converged, iterations, message) -> DesignResult:
    p = problem
    target = 1.0 - p.alpha
    # quadrature error estimate: refined kernel on a subset of the audit grid
    probe = np.asarray(p.constraint_gammas)[:: max(1, len(p.constraint_gammas) // 8)]
    coarse = CurveKernel(d.grid.knots, p.m, p.s, p.alpha, probe, p.x_nodes, p.u_nodes)
    fine = CurveKernel(d.grid.knots, p.m, p.s, p.alpha, probe, 2 * p.x_nodes, 2 * p.u_nodes)
    qerr = float(
        max(np.max(np.abs(coarse.coverage(d) - fine.coverage(d))), np.max(np.abs(coarse.sel(d) - fine.sel(d))))
    )

    violations = []
    for g, c, e2 in zip(audit.gamma, audit.coverage, audit.sel_squared):
        if c < target - COVERAGE_TOL:
            violations.append((float(g), "coverage", float(c)))
        if e2 > p.ell**2 + SEL_SQ_TOL:
            violations.append((float(g), "sel_squared", float(e2)))

    ext = extrapolated_gammas(p.sel_check_gammas)
    tk = CurveKernel(d.grid.knots, p.m, p.s, p.alpha, ext, p.x_nodes, p.u_nodes)
    tail_curve = PerformanceCurve(np.asarray(ext), tk.coverage(d), tk.sel(d) ** 2)
    tail_settled = bool(
        np.all(np.abs(tail_curve.coverage - target) <= TAIL_TOL)
        and np.all(np.abs(np.sqrt(tail_curve.sel_squared) - 1.0) <= TAIL_TOL)
    )
    for g, c, e2 in zip(tail_curve.gamma, tail_curve.coverage, tail_curve.sel_squared):
        if c < target - COVERAGE_TOL:
            violations.append((float(g), "coverage", float(c)))
        if e2 > p.ell**2 + SEL_SQ_TOL:
            violations.append((float(g), "sel_squared", float(e2)))

    objective = sel_at_zero(d, p.m, p.s)
    return DesignResult(
        d=d,
        objective=objective,
        audit=audit,
        converged=converged,
        iterations=iterations,
        feasible=not violations,
        violations=violations,
        tail_check=tail_curve,
        tail_settled=tail_settled,
        quadrature_error=qerr,
        message=message,
    )


def candidate_grids(ks=CANDIDATE_KS, pattern=KNOT_PATTERN) -> list[KnotGrid]:
    return [KnotGrid.scaled(k, pattern) for k in ks]


@dataclass
class SweepRow:
    s: int
    result: DesignResult | None
    status: str = "ok"
    candidates: list = field(default_factory=list)

    def csv_fields(self) -> dict:
        if self.result is None:
            return {"s": self.s, "min_sq_sel": "", "max_sq_sel": "", "min_cp": "", "max_cp": "", "status": self.status}
        out = {"s": self.s, **{k: f"{v:.10g}" for k, v in self.result.summary().items()}}
        out["status"] = self.status
        return out


def sweep_s(m, alpha, ell, s_list, grids=None, seed=0, n_starts=5, **problem_kwargs) -> list[SweepRow]:
    """Best design for each s over the candidate knot layouts.

    A failure for one s is recorded in its row and does not stop the others.
    Duplicate s values are dropped with a warning.
    """
    seen = []
    for s in s_list:
        if s in seen:
            log.warning("duplicate s=%s ignored", s)
            continue
        seen.append(int(s))
    grids = candidate_grids() if grids is None else list(grids)

    def run(s):
        cands = []
        for grid in grids:
            try:
                prob = DesignProblem(m, s, alpha, ell, grid, seed=seed, n_starts=n_starts, **problem_kwargs)
                cands.append(design_d(prob))
            except Exception as exc:  # noqa: BLE001 - recorded per candidate
                log.warning("s=%s k=%s failed: %s", s, grid.k, exc)
                cands.append(exc)
        good = [r for r in cands if isinstance(r, DesignResult) and r.feasible]
        if not good:
            errors = [str(c) for c in cands if not isinstance(c, DesignResult)]
            return SweepRow(s, None, "failed: " + ("; ".join(errors) or "no feasible design"), cands)
        return SweepRow(s, min(good, key=lambda r: r.objective), "ok", cands)

    workers = min(_worker_count(), len(seen))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, seen))
    return [run(s) for s in seen]


def table_csv(rows: list[SweepRow]) -> str:
    cols = ["s", "min_sq_sel", "max_sq_sel", "min_cp", "max_cp", "status"]
    lines = [",".join(cols)]
    for row in rows:
        f = row.csv_fields()
        lines.append(",".join(str(f[c]) for c in cols))
    return "\r\n".join(lines) + "\r\n"

