"""Command-line interface: ``priorci {design,evaluate,simulate,interval,sweep}``.

Exit codes: 0 success, 1 usage or input error, 2 numerical audit failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import t_quantile
from .document import DocumentError, ResultDocument, timestamp
from .evaluator import CurveEvaluationError, ProblemConfig, QuadratureError, _alpha_from_tail, evaluate_curve
from .montecarlo import MIN_REPLICATIONS, SimulationPlan, simulate
from .optimizer import (
    DesignError,
    DesignProblem,
    default_constraint_gammas,
    design_d,
    sweep_s,
    table_csv,
)
from .regression import RegressionError, RegressionProblem, factorial_2_3, interval, summarize
from .spline import DFunction, KnotGrid, SplineError

log = logging.getLogger("priorci")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_AUDIT = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for audit failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    """Comma list of numbers; an item ``a:b:step`` expands to a closed range."""
    out = []
    for item in filter(None, (p.strip() for p in text.split(","))):
        if ":" in item:
            try:
                a, b, step = (float(v) for v in item.split(":"))
            except ValueError:
                raise UsageError(f"bad range {item!r}; expected start:stop:step") from None
            if step <= 0 or b < a:
                raise UsageError(f"bad range {item!r}")
            n = int(round((b - a) / step))
            out.extend(a + step * i for i in range(n + 1))
        else:
            try:
                out.append(float(item))
            except ValueError:
                raise UsageError(f"not a number: {item!r}") from None
    return out


def _gamma_grid(text: str | None, default=None) -> tuple[float, ...]:
    if text is None:
        if default is None:
            raise UsageError("--gamma-grid is required")
        return tuple(default)
    grid = sorted(set(_floats(text)))
    if not grid:
        raise UsageError("--gamma-grid is empty")
    if grid[0] < 0:
        raise UsageError("gamma values must be nonnegative")
    return tuple(grid)


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    # newline="" keeps the CRLF record separators of the CSV outputs intact
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def _load_d(path: str) -> tuple[DFunction, dict]:
    """A stored DFunction, either bare or inside a result document."""
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read d-file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed d-file {path}: {exc}") from exc
    config = {}
    if isinstance(data, dict) and "command" in data:
        try:
            doc = ResultDocument.from_dict(data)
        except (DocumentError, TypeError) as exc:
            raise UsageError(f"malformed d-file {path}: {exc}") from exc
        if doc.d is None:
            raise UsageError(f"result document {path} holds no d function")
        data, config = doc.d, doc.config
    try:
        return DFunction.from_dict(data), config
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed d-file {path}: {exc}") from exc


def _resolve(args, config, d):
    """m, s and alpha from flags, falling back to the stored configuration."""
    m = args.m if args.m is not None else config.get("m")
    s = args.s if args.s is not None else config.get("s")
    if m is None or s is None:
        raise UsageError("--m and --s are required when the d-file carries no configuration")
    alpha = args.alpha if args.alpha is not None else config.get("alpha", _alpha_from_tail(d, m))
    expected = t_quantile(m, alpha)
    if abs(d.tail - expected) > 1e-9 * expected:
        raise UsageError(f"d tail {d.tail:.10g} is not t(m)={expected:.10g} for m={m}, alpha={alpha}")
    return int(m), int(s), float(alpha)


# ---------------------------------------------------------------- commands


def cmd_design(args) -> int:
    if args.knots is None:
        raise UsageError("--knots is required (comma list starting at 0)")
    knots = _floats(args.knots)
    if args.k is not None and (not knots or abs(knots[-1] - args.k) > 1e-12):
        raise UsageError(f"--k {args.k} does not match the last knot {knots[-1] if knots else None}")
    grid = KnotGrid(tuple(knots))
    gammas = _gamma_grid(args.gamma_grid, default_constraint_gammas())
    if gammas[0] != 0.0:
        gammas = (0.0,) + gammas
    started = timestamp()
    problem = DesignProblem(
        args.m,
        args.s,
        args.alpha,
        args.ell,
        grid,
        constraint_gammas=gammas,
        seed=args.seed,
        n_starts=args.starts,
        gradient=args.gradient,
    )
    result = design_d(problem)
    diag = result.to_dict()
    del diag["d"], diag["audit"]
    diag["summary"] = result.summary()
    doc = ResultDocument(
        command="design",
        config={
            "m": args.m,
            "s": args.s,
            "alpha": args.alpha,
            "ell": args.ell,
            "k": grid.k,
            "knots": list(grid.knots),
            "constraint_gammas": list(problem.constraint_gammas),
            "seed": args.seed,
            "starts": args.starts,
            "gradient": args.gradient,
        },
        d=result.d.to_dict(),
        curve=result.audit.to_dict(),
        diagnostics=diag,
        timestamps={"started": started, "finished": timestamp()},
    )
    out = Path(args.out)
    _write(out, "result.json", doc.to_json())
    _write(out, "curve.csv", result.audit.to_csv())
    summary = result.summary()
    print(
        f"min_sq_sel={summary['min_sq_sel']:.6f} max_sq_sel={summary['max_sq_sel']:.6f} "
        f"min_cp={summary['min_cp']:.6f} max_cp={summary['max_cp']:.6f} "
        f"converged={result.converged} feasible={result.feasible}"
    )
    if not result.feasible:
        for g, kind, value in result.violations:
            print(f"audit: {kind} = {value:.8g} at gamma = {g:g}", file=sys.stderr)
        return EXIT_AUDIT
    if not result.converged:
        print(f"optimizer did not converge: {result.message}", file=sys.stderr)
        return EXIT_AUDIT
    return EXIT_OK


def cmd_evaluate(args) -> int:
    d, stored = _load_d(args.d_file)
    m, s, alpha = _resolve(args, stored, d)
    gammas = _gamma_grid(args.gamma_grid)
    if gammas[0] != 0.0:
        raise UsageError("--gamma-grid must include 0")
    started = timestamp()
    config = ProblemConfig(m, s, alpha, max(1.0, args.ell), d, gammas)
    curve = evaluate_curve(config)
    doc = ResultDocument(
        command="evaluate",
        config={"m": m, "s": s, "alpha": alpha, "ell": config.ell, "gamma_grid": list(gammas)},
        d=d.to_dict(),
        curve=curve.to_dict(),
        diagnostics={
            "min_cp": float(np.min(curve.coverage)),
            "max_cp": float(np.max(curve.coverage)),
            "min_sq_sel": float(np.min(curve.sel_squared)),
            "max_sq_sel": float(np.max(curve.sel_squared)),
        },
        timestamps={"started": started, "finished": timestamp()},
    )
    text = curve.to_csv()
    if args.out:
        out = Path(args.out)
        _write(out, "result.json", doc.to_json())
        _write(out, "curve.csv", text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    if args.reps < MIN_REPLICATIONS:
        raise UsageError(f"--reps must be at least {MIN_REPLICATIONS}")
    d, stored = _load_d(args.d_file)
    m, s, alpha = _resolve(args, stored, d)
    started = timestamp()
    plan = SimulationPlan(args.reps, args.seed, m, s, args.gamma, d, alpha)
    res = simulate(plan)
    payload = {**res.to_dict(), "sel_squared_estimate": res.sel_squared_estimate, "sel_squared_stderr": res.sel_squared_stderr}
    doc = ResultDocument(
        command="simulate",
        config={"m": m, "s": s, "alpha": alpha, "gamma": args.gamma, "reps": args.reps, "seed": args.seed},
        d=d.to_dict(),
        simulation=payload,
        timestamps={"started": started, "finished": timestamp()},
    )
    if args.out:
        _write(Path(args.out), "result.json", doc.to_json())
    sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _read_sidecar(path: str, p: int):
    """a on the first line, then p rows of C, then t; whitespace separated."""
    try:
        raw = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read sidecar: {exc}") from exc
    rows = []
    for line in raw:
        line = line.split("#", 1)[0].strip()
        if line:
            try:
                rows.append([float(v) for v in line.split()])
            except ValueError:
                raise UsageError(f"sidecar {path}: non-numeric entry in {line!r}") from None
    if len(rows) != p + 2:
        raise UsageError(f"sidecar {path}: expected {p + 2} rows (a, {p} rows of C, t), found {len(rows)}")
    a, c_rows, t = rows[0], rows[1:-1], rows[-1]
    if len({len(r) for r in c_rows}) != 1:
        raise UsageError(f"sidecar {path}: rows of C differ in length")
    return np.array(a), np.array(c_rows), np.array(t)


def _read_data(path: str, response: str | None):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"cannot read data: {exc}") from exc
    rows = [r for r in rows if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise UsageError(f"{path}: need a header and at least one data row")
    header = [h.strip() for h in rows[0]]
    col = 0 if response is None else (header.index(response) if response in header else None)
    if col is None:
        raise UsageError(f"{path}: no column named {response!r}")
    try:
        table = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if table.shape[1] != len(header):
        raise UsageError(f"{path}: ragged rows")
    Y = table[:, col]
    X = np.delete(table, col, axis=1)
    return X, Y


def cmd_interval(args) -> int:
    d, stored = _load_d(args.d_file)
    if args.factorial23 is not None:
        if args.data is not None:
            raise UsageError("use either --data or --factorial23, not both")
        if args.a is None:
            raise UsageError("--factorial23 needs --a a1,a2,a3")
        problem, Y = factorial_2_3(_floats(args.factorial23), _floats(args.a))
    elif args.data is not None:
        if args.sidecar is None:
            raise UsageError("--data needs --sidecar declaring a, C and t")
        X, Y = _read_data(args.data, args.response)
        if args.intercept:
            X = np.column_stack([np.ones(len(Y)), X])
        a, C, t = _read_sidecar(args.sidecar, X.shape[1])
        problem = RegressionProblem(X, a, C, t)
    else:
        raise UsageError("give --data with --sidecar, or --factorial23 with --a")

    summary = summarize(problem, Y)
    alpha = args.alpha if args.alpha is not None else stored.get("alpha", 0.05)
    expected = t_quantile(summary.m, alpha)
    if abs(d.tail - expected) > 1e-9 * expected:
        raise UsageError(f"d tail {d.tail:.10g} is not t(m)={expected:.10g} for the data's m={summary.m}")
    if stored.get("s") is not None and stored["s"] != summary.s:
        log.warning("d was designed for s=%s but the data give s=%s", stored["s"], summary.s)
    report = interval(summary, d)
    stats = {
        "theta_hat": summary.theta_hat,
        "sigma_hat": summary.sigma_hat,
        "F": summary.F,
        "m": summary.m,
        "s": summary.s,
        "v11": summary.v11,
    }
    doc = ResultDocument(
        command="interval",
        config={"alpha": alpha, "m": summary.m, "s": summary.s},
        d=d.to_dict(),
        interval={**report.to_dict(), **stats},
        timestamps={"created": timestamp()},
    )
    print(f"J(d) = [{report.lower:.10g}, {report.upper:.10g}]")
    print(f"I    = [{report.standard_lower:.10g}, {report.standard_upper:.10g}]")
    print(f"F = {summary.F:.10g}  sqrt(F) = {report.sqrt_F:.10g}  k = {d.k:g}")
    print(f"used_standard = {str(report.used_standard).lower()}")
    if args.out:
        _write(Path(args.out), "result.json", doc.to_json())
    return EXIT_OK


def cmd_sweep(args) -> int:
    s_list = [int(v) for v in _floats(args.s_list)]
    if not s_list or any(s < 1 for s in s_list):
        raise UsageError("--s-list needs positive integers")
    rows = sweep_s(args.m, args.alpha, args.ell, s_list, seed=args.seed, n_starts=args.starts)
    text = table_csv(rows)
    if args.out:
        path = Path(args.out)
        _write(path.parent, path.name, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if all(r.status == "ok" for r in rows) else EXIT_AUDIT


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="priorci", description="Confidence intervals that use uncertain prior information.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("design", help="optimize the knot values of d")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--s", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--ell", type=float, required=True)
    p.add_argument("--k", type=float)
    p.add_argument("--knots", help="comma list, first 0 and last k")
    p.add_argument("--gamma-grid", help="constraint set, e.g. 0:10:0.25,12,15,20")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--gradient", choices=("analytic", "fd"), default="analytic")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("evaluate", help="coverage and sel^2 of a stored d")
    p.add_argument("--d-file", required=True)
    p.add_argument("--gamma-grid", required=True)
    p.add_argument("--m", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--ell", type=float, default=1.0)
    p.add_argument("--out", help="output directory (CSV goes to stdout otherwise)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="Monte Carlo check of a stored d")
    p.add_argument("--d-file", required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--reps", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("interval", help="J(d) and the standard interval for data")
    p.add_argument("--d-file", required=True)
    p.add_argument("--data", help="CSV with a header; response plus predictor columns")
    p.add_argument("--sidecar", help="a, rows of C, t; one row per line")
    p.add_argument("--response", help="response column name (default: first column)")
    p.add_argument("--intercept", action="store_true", help="prepend a column of ones to X")
    p.add_argument("--factorial23", metavar="Y1,...,Y8", help="responses of a 2^3 experiment in Yates order")
    p.add_argument("--a", help="a1,a2,a3 for --factorial23")
    p.add_argument("--alpha", type=float)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_interval)

    p = sub.add_parser("sweep", help="best design for each s over candidate knot layouts")
    p.add_argument("--s-list", required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--ell", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--starts", type=int, default=5)
    p.add_argument("--out", help="CSV path (stdout otherwise)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except UsageError as exc:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        sub.print_usage(sys.stderr)
        print(f"priorci {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (QuadratureError, CurveEvaluationError) as exc:
        print(f"priorci {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except (RegressionError, SplineError, DesignError, DocumentError, ValueError) as exc:
        print(f"priorci {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
