"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import benchmark
from .errors import ConfigError, TrrbError
from .estimators import EstimatorBundle
from .fom import FomSystem
from .optimizer import TrConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trrbopt",
                                     description="adaptive TR-RB PDE-constrained optimization")
    parser.add_argument("--mesh-nx", type=int, default=None, help="override mesh nx")
    parser.add_argument("--mesh-ny", type=int, default=None, help="override mesh ny")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a problem config")
    p.add_argument("config")

    p = sub.add_parser("solve-fom", help="solve the full-order PDE at a parameter")
    p.add_argument("config")
    p.add_argument("--mu", required=True, help="comma-separated parameter values")
    p.add_argument("--out", default=None, help="write solution vector as JSON")

    p = sub.add_parser("optimize", help="run one optimizer variant")
    p.add_argument("config")
    p.add_argument("--method", required=True)
    p.add_argument("--tau-foc", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write the run record as JSON")

    p = sub.add_parser("experiment1", help="parameter-control experiment")
    p.add_argument("config")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tau-foc", type=float, default=5e-4)
    p.add_argument("--tau-mu", type=float, default=1e-4)
    p.add_argument("--methods", default=None, help="comma-separated method ids")
    p.add_argument("--out", default="runs_experiment1", help="output directory")

    p = sub.add_parser("experiment2", help="large parameter set experiment")
    p.add_argument("config")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tau-foc", type=float, default=1e-5)
    p.add_argument("--methods", default=None)
    p.add_argument("--out", default="runs_experiment2")

    p = sub.add_parser("compare", help="aggregate run records into a comparison table")
    p.add_argument("records", nargs="+", help="record JSON files or directories")
    p.add_argument("--out", default=None, help="write CSV here (text table to stdout)")

    return parser


def _parse_methods(arg):
    if arg is None:
        return None
    methods = [m.strip() for m in arg.split(",") if m.strip()]
    for m in methods:
        if m not in benchmark.METHODS:
            raise _UsageError(f"unknown method '{m}'; choose from {benchmark.METHODS}")
    return methods


class _UsageError(Exception):
    pass


def _write_records(records, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        path = out / f"{rec['method']}_seed{rec['seed']}.json"
        with open(path, "w") as fh:
            json.dump(benchmark.strip_record(rec), fh, indent=1)
    benchmark.emit_plot_data(records, out)
    cmp_ = benchmark.compare_methods(records)
    (out / "compare.csv").write_text(cmp_["csv"])
    (out / "compare.txt").write_text(cmp_["text"])
    print(cmp_["text"])


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK

    try:
        return _dispatch(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrrbError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def _dispatch(args) -> int:
    if args.command == "validate":
        benchmark.load_config(args.config)
        print("config valid")
        return EXIT_OK

    if args.command == "solve-fom":
        cfg = benchmark.load_config(args.config)
        problem, store, meta = benchmark.build_problem(cfg, nx=args.mesh_nx, ny=args.mesh_ny)
        mu = np.array([float(v) for v in args.mu.split(",")])
        if mu.size != problem.dim:
            raise _UsageError(f"--mu needs {problem.dim} values, got {mu.size}")
        fom = FomSystem(problem, store)
        u = fom.solve_primal(mu)
        j = fom.objective(mu, u)
        print(f"objective {j:.12g}  (dofs {store.dim}, min u {u.min():.6g}, max u {u.max():.6g})")
        if args.out:
            with open(args.out, "w") as fh:
                json.dump({"mu": mu.tolist(), "objective": j, "u": u.tolist()}, fh)
        return EXIT_OK

    if args.command == "optimize":
        methods = _parse_methods(args.method)
        cfg = benchmark.load_config(args.config)
        problem, store, meta = benchmark.build_problem(cfg, nx=args.mesh_nx, ny=args.mesh_ny)
        bundle = EstimatorBundle.build(problem, store)
        mu0 = benchmark.random_mu(problem.box, args.seed)
        trcfg = TrConfig(tau_foc=args.tau_foc)
        rec = benchmark.run_method(methods[0], problem, store, trcfg, mu0, args.seed,
                                   bundle=bundle, with_second_order=True)
        term = rec["terminal"]
        print(f"method {rec['method']}: converged={term['converged']} "
              f"iterations={term['iterations']} gh={term['gh']:.3e} "
              f"runtime={term['runtime']:.2f}s fom_solves={term['fom_solves']}")
        if args.out:
            with open(args.out, "w") as fh:
                json.dump(benchmark.strip_record(rec), fh, indent=1)
        if not term["converged"]:
            print("warning: run did not reach the FOC tolerance", file=sys.stderr)
        return EXIT_OK

    if args.command == "experiment1":
        cfg = benchmark.load_config(args.config)
        records = benchmark.experiment1(cfg, seeds=args.seeds, tau_foc=args.tau_foc,
                                        tau_mu=args.tau_mu,
                                        methods=_parse_methods(args.methods),
                                        nx=args.mesh_nx, ny=args.mesh_ny)
        _write_records(records, args.out)
        return EXIT_OK

    if args.command == "experiment2":
        cfg = benchmark.load_config(args.config)
        records = benchmark.experiment2(cfg, seeds=args.seeds, tau_foc=args.tau_foc,
                                        methods=_parse_methods(args.methods),
                                        nx=args.mesh_nx, ny=args.mesh_ny)
        _write_records(records, args.out)
        return EXIT_OK

    if args.command == "compare":
        records = []
        for item in args.records:
            path = Path(item)
            files = sorted(path.glob("*.json")) if path.is_dir() else [path]
            for f in files:
                with open(f) as fh:
                    data = json.load(fh)
                if isinstance(data, dict) and data.get("schema") == benchmark.RUN_SCHEMA:
                    records.append(data)
        if not records:
            raise _UsageError("no run records found")
        cmp_ = benchmark.compare_methods(records)
        print(cmp_["text"])
        if args.out:
            Path(args.out).write_text(cmp_["csv"])
        return EXIT_OK

    raise _UsageError(f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
