"""Command-line interface: ``lprefine solve`` and ``lprefine bench``.

Exit codes: 0 when the solve converged, 1 on input or I/O problems, 2 when a
solver raised or stopped before converging.  ``LPREFINE_LOG`` selects the log
level on standard error (``error``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import os
import sys
import time

import numpy as np

from .errors import LprefineError, MalformedGraph, UnsupportedExponent
from .formats import dumps_report, format_float, read_matrix, read_vector
from .graph import laplacian_value, read_graph, solve_graph
from .homotopy import start_solution
from .inverse import MaintenanceBackend
from .irls import classic_irls, irls_solve
from .linalg import AffineConstraint, DirectBackend
from .mwu import compute_params
from .refinement import ProblemInstance, SolverReport, objective, warm_start_l2
from .residual import complete_solve, log_m_exponent
from .rng import synthetic_instance

log = logging.getLogger("lprefine")


class InputError(Exception):
    """Bad command-line input; mapped to exit code 1."""


def _configure_logging() -> None:
    level = os.environ.get("LPREFINE_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr, level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def _backend(name: str):
    return MaintenanceBackend() if name == "inverse-maintenance" else DirectBackend()


def _load_instance(args) -> ProblemInstance:
    if args.N is None:
        if args.m is None or args.n is None:
            raise InputError("give --N (and friends), --graph, or --m/--n for a synthetic instance")
        pure = args.algo in ("irls", "classic-irls") or args.warm_start == "homotopy"
        A, M, N, d, b = synthetic_instance(
            args.seed, args.n, args.m, max(1, args.n // 4), m1=max(1, args.n // 2), pure=pure
        )
        return ProblemInstance.build(A, M, N, d, b, args.p)
    N = read_matrix(args.N)
    n = N.shape[1]
    A = read_matrix(args.A) if args.A else None
    M = read_matrix(args.M) if args.M else None
    d = read_vector(args.d) if args.d else None
    b = read_vector(args.b) if args.b else None
    if A is not None and b is None:
        raise InputError("--A needs a matching --b")
    if A is None and b is not None:
        A = np.zeros((0, n))
    return ProblemInstance.build(A, M, N, d, b, args.p)


def _start(inst: ProblemInstance, how: str, backend) -> np.ndarray:
    if how == "homotopy":
        if not inst.is_pure:
            raise InputError("--warm-start homotopy needs a pure instance (no --M, no --d)")
        return start_solution(inst.A, inst.N, inst.b, inst.p, backend)
    if how == "zero":
        # the origin when feasible, otherwise the nearest feasible point
        return AffineConstraint(inst.A, inst.n).particular(inst.b)
    return warm_start_l2(inst)


def _report_dict(args, inst, x, report: SolverReport, path: str, elapsed: float) -> dict:
    kappas = report.kappa_trace
    extras = {k: report.extras[k] for k in sorted(report.extras)
              if isinstance(report.extras[k], (int, float)) and not isinstance(report.extras[k], bool)}
    out = {
        "status": report.status,
        "algo": args.algo,
        "path": path,
        "backend": args.backend,
        "warm_start": args.warm_start,
        "p": inst.p,
        "n": inst.n,
        "m1": inst.m1,
        "m2": inst.m2,
        "d_rows": int(inst.A.shape[0]),
        "eps": args.eps,
        "objective": objective(inst, x),
        "feasibility_error": inst.feasibility_error(x),
        "iterations": report.iterations,
        "linear_solves": report.linear_solves,
        "primal_steps": report.primal_steps,
        "width_steps": report.width_steps,
        "accepted_steps": report.accepted_steps,
        "halvings": report.halvings,
        "nu0": report.nu0,
        "kappa_eff": max(kappas) if kappas else None,
        "kappa_trace": kappas,
        "nu_trace": report.nu_trace,
        "objective_trace": report.objective_trace,
        "counters": extras,
        "x": x,
    }
    if args.timing:
        out["wall_seconds"] = elapsed
    return out


def _solve_instance(args, inst: ProblemInstance, backend):
    if args.algo in ("irls", "classic-irls"):
        if not inst.is_pure:
            raise InputError(f"--algo {args.algo} needs a pure instance (no --M, no --d)")
        if args.algo == "irls":
            x, report = irls_solve(inst.A, inst.N, inst.b, inst.p, args.eps, backend,
                                   max_iters=args.max_solves)
        else:
            x, trace = classic_irls(inst.A, inst.N, inst.b, inst.p, args.max_iters)
            report = SolverReport(objective_trace=list(trace), iterations=len(trace) - 1,
                                  linear_solves=len(trace), status="finished")
        return x, report, args.algo
    x0 = _start(inst, args.warm_start, backend)
    path = None
    if args.algo == "mwu":
        path = "exact" if inst.p == 2 else "mwu"
    x, report = complete_solve(inst, x0, args.eps, backend, kappa=args.kappa,
                               max_solves=args.max_solves, path=path)
    return x, report, report.extras.get("path", "")


def cmd_solve(args) -> int:
    start = time.perf_counter()
    backend = _backend(args.backend)
    try:
        if args.graph or args.labels:
            if not (args.graph and args.labels):
                raise InputError("--graph and --labels go together")
            graph = read_graph(args.graph, args.labels)
        else:
            graph = None
            inst = _load_instance(args)
    except (OSError, ValueError, InputError, MalformedGraph) as exc:
        print(f"lprefine: input error: {exc}", file=sys.stderr)
        return 1
    try:
        if graph is not None:
            algo = {"classic-irls": "classic-irls", "irls": "irls"}.get(args.algo, "auto")
            if args.algo == "mwu":
                algo = "mwu"
            values, report = solve_graph(graph, args.p, args.eps, algo, backend)
            out = {
                "status": report.status,
                "algo": args.algo,
                "p": float(args.p),
                "vertices": graph.n_total,
                "edges": len(graph.edges),
                "objective": laplacian_value(graph, values, args.p),
                "iterations": report.iterations,
                "linear_solves": report.linear_solves,
                "width_steps": report.width_steps,
                "halvings": report.halvings,
                "kappa_eff": max(report.kappa_trace) if report.kappa_trace else None,
                "nu_trace": report.nu_trace,
                "objective_trace": report.objective_trace,
                "values": values,
            }
            if args.timing:
                out["wall_seconds"] = time.perf_counter() - start
        else:
            x, report, path = _solve_instance(args, inst, backend)
            out = _report_dict(args, inst, x, report, path, time.perf_counter() - start)
    except InputError as exc:
        print(f"lprefine: input error: {exc}", file=sys.stderr)
        return 1
    except (LprefineError, np.linalg.LinAlgError) as exc:
        print(f"lprefine: solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    text = dumps_report(out)
    try:
        if args.report:
            with open(args.report, "w", encoding="utf-8") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
    except OSError as exc:
        print(f"lprefine: cannot write report: {exc}", file=sys.stderr)
        return 1
    if report.status not in ("converged", "finished"):
        print(f"lprefine: stopped early ({report.status})", file=sys.stderr)
        return 2
    return 0


BENCH_COLUMNS = [
    "m", "n", "p", "seed", "algo", "path", "status", "iterations", "linear_solves",
    "primal_steps", "width_steps", "T", "K_bar", "objective",
]


def iteration_ceilings(p: float, m: int, path: str) -> tuple[str, str]:
    """``T`` and the width budget for the exponent the MWU solver actually runs at."""
    if path == "logm":
        q = log_m_exponent(m)
    elif path == "mwu":
        q = p
    else:
        return "", ""
    params = compute_params(m, q)
    return str(params.T), str(params.width_budget)


def bench_row(algo: str, m: int, n: int, p: float, seed: int, eps: float, backend,
              max_solves: int | None, timing: bool) -> dict:
    pure = algo in ("irls", "classic-irls")
    A, M, N, d, b = synthetic_instance(seed, n, m, max(1, n // 4), m1=max(1, n // 2), pure=pure)
    inst = ProblemInstance.build(A, M, N, d, b, p)
    start = time.perf_counter()
    if algo == "irls":
        x, report = irls_solve(A, N, b, p, eps, backend, max_iters=max_solves)
        path = "irls"
    elif algo == "classic-irls":
        x, trace = classic_irls(A, N, b, p)
        report = SolverReport(objective_trace=trace, iterations=len(trace) - 1,
                              linear_solves=len(trace), status="finished")
        path = "classic-irls"
    else:
        path = None if algo == "auto" else ("exact" if p == 2 else "mwu")
        x, report = complete_solve(inst, None, eps, backend, max_solves=max_solves, path=path)
        path = report.extras["path"]
    elapsed = time.perf_counter() - start
    T, K = iteration_ceilings(p, m, path)
    row = {
        "m": m, "n": n, "p": format_float(p), "seed": seed, "algo": algo, "path": path,
        "status": report.status, "iterations": report.iterations,
        "linear_solves": report.linear_solves, "primal_steps": report.primal_steps,
        "width_steps": report.width_steps, "T": T, "K_bar": K,
        "objective": format_float(objective(inst, x)),
    }
    if timing:
        row["wall_seconds"] = f"{elapsed:.6f}"
    return row


def cmd_bench(args) -> int:
    backend = _backend(args.backend)
    columns = BENCH_COLUMNS + (["wall_seconds"] if args.timing else [])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    status = 0
    for m in args.m:
        n = args.n if args.n is not None else max(4, m // 4)
        for p in args.p:
            for seed in args.seeds:
                try:
                    row = bench_row(args.algo, m, n, p, seed, args.eps, backend,
                                    args.max_solves, args.timing)
                except (LprefineError, UnsupportedExponent, np.linalg.LinAlgError) as exc:
                    print(f"lprefine: m={m} p={p} seed={seed}: {type(exc).__name__}: {exc}",
                          file=sys.stderr)
                    status = 2
                    continue
                writer.writerow(row)
    try:
        if args.csv:
            with open(args.csv, "w", encoding="utf-8", newline="") as fh:
                fh.write(buf.getvalue())
        else:
            sys.stdout.write(buf.getvalue())
    except OSError as exc:
        print(f"lprefine: cannot write CSV: {exc}", file=sys.stderr)
        return 1
    return status


def _positive(text: str) -> float:
    val = float(text)
    if not val > 0 or not math.isfinite(val):
        raise argparse.ArgumentTypeError("must be a positive number")
    return val


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lprefine", description="High-accuracy lp-norm regression.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--eps", type=_positive, default=1e-8, help="target accuracy")
    common.add_argument("--algo", choices=["auto", "mwu", "irls", "classic-irls"], default="auto")
    common.add_argument("--backend", choices=["direct", "inverse-maintenance"], default="direct")
    common.add_argument("--max-solves", type=int, default=None,
                        help="stop after this many linear solves (iterations for irls)")
    common.add_argument("--timing", action="store_true", help="include wall-clock time in the output")

    solve = sub.add_parser("solve", parents=[common], help="solve one instance")
    solve.add_argument("--p", type=float, required=True)
    solve.add_argument("--warm-start", choices=["zero", "l2", "homotopy"], default="l2")
    for name in ("A", "M", "N"):
        solve.add_argument(f"--{name}", help=f"matrix {name} (Matrix Market or dense text)")
    solve.add_argument("--d", help="linear term vector")
    solve.add_argument("--b", help="constraint right-hand side")
    solve.add_argument("--graph", help="edge list: 'u v weight' per line")
    solve.add_argument("--labels", help="labels: 'vertex value' per line")
    solve.add_argument("--report", help="write the JSON report here instead of stdout")
    solve.add_argument("--seed", type=int, default=0, help="seed for a synthetic instance")
    solve.add_argument("--m", type=int, help="rows of N for a synthetic instance")
    solve.add_argument("--n", type=int, help="columns for a synthetic instance")
    solve.add_argument("--kappa", type=_positive, default=None, help="fixed residual quality")
    solve.add_argument("--max-iters", type=int, default=100, help="classic-irls iterations")
    solve.set_defaults(func=cmd_solve)

    bench = sub.add_parser("bench", parents=[common], help="run a synthetic suite, emit CSV")
    bench.add_argument("--p", type=float, nargs="*", default=[2.0, 4.0, 8.0])
    bench.add_argument("--m", type=int, nargs="*", default=[64, 256])
    bench.add_argument("--n", type=int, default=None, help="columns (default max(4, m/4))")
    bench.add_argument("--seeds", type=int, nargs="*", default=[0])
    bench.add_argument("--csv", help="write the CSV here instead of stdout")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
