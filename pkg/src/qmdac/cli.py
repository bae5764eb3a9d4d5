"""Command-line interface.

Exit status: 0 success, 2 tolerance not met, 3 structural precondition
violated (no stabilizing solution, no spectral split, singular operator,
bad dimensions).
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import hodlr
from .bench import CSV_COLUMNS, FAMILIES, METHODS, ProblemSpec, run_bench, solve_problem, write_csv
from .dense import dense_uqme_oracle
from .errors import NotConverged, SolverError
from .hodlr import HodlrMatrix
from .problems import UqmeProblem

EXIT_OK, EXIT_TOLERANCE, EXIT_STRUCTURE = 0, 2, 3

DEFAULT_FAMILY = {
    "solve-care": "care-ex1",
    "solve-gcare": "gcare-ex3",
    "solve-uqme": "dqbd-random",
    "update-care": "care-ex1",
    "update-uqme": "dqbd-random",
    "bench": "care-ex1",
    "check": "care-ex1",
}


def _common(p):
    p.add_argument("--problem", choices=FAMILIES, help="problem family")
    p.add_argument("--n", type=int, nargs="+", default=[512], help="problem size(s)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nmin", type=int, default=256, help="HODLR leaf size")
    p.add_argument("--tau-sigma", type=float, default=1e-12, help="recompression threshold")
    p.add_argument("--tau-care", type=float, default=1e-8)
    p.add_argument("--tau-uqme", type=float, default=1e-8)
    p.add_argument("--t-max", type=int, default=150, help="correction solver iteration cap")
    p.add_argument("--parallel", action="store_true", help="solve child problems in threads")
    p.add_argument("--mtx", action="append", default=[], metavar="KEY=PATH",
                   help="Matrix Market input for --problem file (keys A, B, C, Q, E)")
    p.add_argument("--out", help="CSV file receiving one row per run")
    p.add_argument("--log", help="file receiving per-node JSON records and solver logs")
    p.add_argument("--solution", help="save the solution in the HODLR container format")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qmdac", description="Divide-and-conquer solvers for Riccati and quadratic matrix equations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, method_help in [
        ("solve-care", "dac or dense"),
        ("solve-gcare", "dac or dense"),
        ("solve-uqme", "dac or dense (cyclic reduction)"),
        ("update-care", None),
        ("update-uqme", None),
        ("bench", "one or more of dac, dense, update"),
        ("check", None),
    ]:
        p = sub.add_parser(name)
        _common(p)
        if method_help:
            bench = name == "bench"
            p.add_argument("--method", nargs="+" if bench else None,
                           choices=METHODS if bench else ("dac", "dense"),
                           default=["dac"] if bench else "dac", help=method_help)
        if name == "check":
            p.add_argument("--oracle", choices=["dense", "eig"], default="dense",
                           help="dense: Schur CARE / cyclic reduction; eig: UQME eigenvector oracle")
            p.add_argument("--tol", type=float, default=1e-6, help="relative difference allowed")
    return parser


def _spec(args, n):
    family = args.problem or DEFAULT_FAMILY[args.command]
    files = dict(item.split("=", 1) for item in args.mtx)
    overrides = dict(n_min=args.nmin, tau_sigma=args.tau_sigma, tau_care=args.tau_care,
                     tau_uqme=args.tau_uqme, t_max=args.t_max, parallel_children=args.parallel)
    return ProblemSpec(family, n, args.seed, overrides, files)


def _tolerance(args, problem):
    return 10 * (args.tau_uqme if isinstance(problem, UqmeProblem) else args.tau_care)


def _setup_log(path):
    if not path:
        return None
    handler = logging.FileHandler(path, mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    log = logging.getLogger("qmdac")
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def _log_report(result):
    log = logging.getLogger("qmdac")
    rep = result.report
    if rep is not None and hasattr(rep, "node_lines"):
        for line in rep.node_lines():
            log.info(line)
    log.info(json.dumps({"summary": result.row.as_dict()}))


def _save(path, X, n_min):
    if isinstance(X, HodlrMatrix):
        hodlr.save(path, X)
    else:
        hodlr.save(path, HodlrMatrix.from_dense(np.asarray(X), n_min, 1e-14))


def _emit(rows, out):
    print(",".join(CSV_COLUMNS))
    for r in rows:
        d = r.as_dict()
        print(",".join(str(d[k]) for k in CSV_COLUMNS))
    if out:
        write_csv(out, rows)


def _run(args):
    if args.command.startswith("update"):
        methods = ["update"]
    elif args.command == "bench":
        methods = args.method
    else:
        methods = [args.method]
    rows, status = [], EXIT_OK
    for n in args.n:
        for method in methods:
            result = run_bench(_spec(args, n), method)
            _log_report(result)
            rows.append(result.row)
            if result.row.res > _tolerance(args, result.problem):
                status = EXIT_TOLERANCE
            if args.solution:
                _save(args.solution, result.X, args.nmin)
    _emit(rows, args.out)
    return status


def _check(args):
    """D&C solution against an independent dense solution."""
    status = EXIT_OK
    for n in args.n:
        spec = _spec(args, n)
        problem = spec.build()
        cfg = spec.config()
        X, _, _ = solve_problem(problem, "dac", cfg)
        Xd = X.to_dense() if isinstance(X, HodlrMatrix) else np.asarray(X)
        if args.oracle == "eig":
            if not isinstance(problem, UqmeProblem):
                raise SystemExit("--oracle eig applies to UQME problems only")
            Xo = dense_uqme_oracle(problem.A.toarray(), problem.B.toarray(), problem.C.toarray())
        else:
            Xo, _, _ = solve_problem(problem, "dense", cfg)
        diff = np.linalg.norm(Xd - Xo, 2) / max(np.linalg.norm(Xo, 2), np.finfo(float).tiny)
        ok = diff <= args.tol
        print(f"n={n} family={spec.family} oracle={args.oracle} rel_diff={diff:.3e} "
              f"{'PASS' if ok else 'FAIL'}")
        logging.getLogger("qmdac").info(json.dumps({"n": n, "rel_diff": diff, "pass": bool(ok)}))
        if not ok:
            status = EXIT_TOLERANCE
    return status


def main(argv=None):
    args = build_parser().parse_args(argv)
    handler = _setup_log(args.log)
    try:
        if args.command == "check":
            return _check(args)
        return _run(args)
    except NotConverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TOLERANCE
    except (SolverError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STRUCTURE
    finally:
        if handler is not None:
            logging.getLogger("qmdac").removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
