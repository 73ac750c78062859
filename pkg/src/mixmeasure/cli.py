"""Command-line entry point: ``mixmeasure <subcommand> ...``.

Exit status is 0 on success or a passing check, 1 when a check fails and 2
on usage errors (bad arguments, unreadable files, violated preconditions).
"""

from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .advect import MixingTrace, OTConfig, simulate
from .config import ConfigError, build_init, flat_json, parse_config, parse_dt, parse_protocol, parse_solver, run_config
from .field import PeriodicGrid, read_field, write_field, write_field_csv
from .maximal import MaxFnParams, check_classical_lp_bound, check_l1_bound, check_pointwise_bound, weighted_max_fn
from .norms import NormReport, bv_seminorm, gl_energy, hminus1, variance
from .transport import CostFunction, signed_masses, solve_ot, warn_if_capped
from .verify import parse_corpus, rates_agree, verify_sandwich, verify_theorem1, verify_theorem2

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _float_or_inf(text: str) -> float:
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


def cmd_gen(args) -> int:
    grid = PeriodicGrid(args.dim, args.n)
    rho = build_init(args.init, grid, args.cutoff)
    write_field(args.out, rho)
    if args.csv:
        write_field_csv(args.csv, rho)
    return EXIT_OK


def cmd_norms(args) -> int:
    rho = read_field(args.field)
    try:
        gl = gl_energy(rho)
    except ValueError:
        # undefined far outside [-1, 1]
        gl = math.nan
    if args.header:
        print("hminus1,bv,variance,gl_energy")
    print(NormReport(hminus1(rho), bv_seminorm(rho), variance(rho), gl).as_csv_row())
    return EXIT_OK


def cmd_ot(args) -> int:
    rho = read_field(args.field)
    cost = CostFunction.parse(args.cost)
    solver, reg, _ = parse_solver(args.solver)
    a, b = signed_masses(rho, args.m)
    size = max(np.count_nonzero(a), np.count_nonzero(b))
    if solver == "exact" and warn_if_capped(size):
        solver, reg = "entropic", 1e-3
    result = solve_ot(a, b, cost, rho.grid, solver, reg)
    print("cost,dual_gap,solver,iterations")
    print(result.csv_row())
    if args.plan:
        p = result.plan
        with open(args.plan, "w") as fh:
            fh.write("i,j,mass\n")
            for i, j, m in zip(p.source, p.target, p.mass):
                fh.write(f"{i},{j},{m!r}\n")
    if result.dual_gap is not None and result.dual_gap > args.gap_tol:
        print(f"dual gap {result.dual_gap:.3e} exceeds {args.gap_tol:g}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_maxfn(args) -> int:
    f = read_field(args.field)
    if args.check is None:
        M = weighted_max_fn(f, MaxFnParams(args.r, args.tau))
        print("r,tau,mean,max")
        print(f"{args.r!r},{args.tau!r},{M.mean()!r},{float(M.values.max())!r}")
        if args.out:
            write_field(args.out, M)
        return EXIT_OK
    kind, _, arg = args.check.partition(":")
    if kind == "pointwise":
        theta = float(arg)
        ratio = check_pointwise_bound(f, theta, args.r, args.samples, args.seed)
        label = f"pointwise:{theta:g}"
    elif kind == "l1" and not arg:
        ratio = check_l1_bound(f, args.tau, args.r)
        label = "l1"
    elif kind == "lp":
        p = _float_or_inf(arg)
        ratio = check_classical_lp_bound(f, p, args.r)
        label = f"lp:{p:g}"
    else:
        raise UsageError(f"bad --check {args.check!r}; expected pointwise:THETA, l1 or lp:P")
    print("check,r,tau,ratio")
    print(f"{label},{args.r!r},{args.tau!r},{ratio!r}")
    if args.bound is not None and not ratio <= args.bound:
        return EXIT_FAIL
    return EXIT_OK


def cmd_simulate(args) -> int:
    grid = PeriodicGrid(2, args.n)
    rho0 = build_init(args.init, grid, args.cutoff)
    protocol = parse_protocol(args.protocol)
    dt = parse_dt(args.dt, grid.h)
    solver, reg, enabled = parse_solver(args.solver)
    snap = None
    if args.snapshots:
        out = Path(args.snapshots)
        out.mkdir(parents=True, exist_ok=True)

        def snap(t, rho):
            write_field(out / f"rho_t{t:.6f}.mxb", rho)

    trace, _ = simulate(rho0, protocol, args.T, dt, args.observe_every, OTConfig(solver, reg=reg, enabled=enabled), snap)
    trace.to_csv(args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.what == "sandwich":
        solver, reg, _ = parse_solver(args.solver)
        rep = verify_sandwich(
            parse_corpus(args.corpus), args.n, OTConfig(solver, reg=reg), args.upper_factor, not args.no_refine, args.cutoff
        )
        if args.records:
            Path(args.records).write_text(rep.records_csv())
        summary = rep.summary()
        summary.pop("corpus")
        print(flat_json(summary))
        return EXIT_OK if rep.passed else EXIT_FAIL
    if args.what in ("theorem1", "theorem2"):
        if len(args.traces) != 1:
            raise UsageError(f"{args.what} takes exactly one trace")
        trace = MixingTrace.from_csv(args.traces[0])
        p = _float_or_inf(args.p)
        if args.what == "theorem1":
            fit = verify_theorem1(trace, p, args.slack)
        else:
            fit = verify_theorem2(trace, args.bv0 if args.bv0 is not None else trace.bv[0], p, args.slack)
        print(flat_json(fit.to_dict()))
        return EXIT_OK if fit.passed else EXIT_FAIL
    # uniformity across initial data
    if len(args.traces) < 2:
        raise UsageError("uniformity needs at least two traces")
    p = _float_or_inf(args.p)
    rates = {}
    for path in args.traces:
        trace = MixingTrace.from_csv(path)
        fit = verify_theorem1(trace, p) if args.quantity == "D" else verify_theorem2(trace, trace.bv[0], p)
        rates[path] = fit.c_fit
    vals = list(rates.values())
    ok = all(rates_agree(a, b, args.tol) for i, a in enumerate(vals) for b in vals[i + 1 :])
    record = {f"c_fit[{k}]": v for k, v in rates.items()}
    record.update({"quantity": args.quantity, "p": p, "tol": args.tol, "pass": ok})
    print(flat_json(record))
    return EXIT_OK if ok else EXIT_FAIL


def cmd_run(args) -> int:
    if args.dry_run:
        try:
            parse_config(args.config)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE
        print(f"{args.config}: ok")
        return EXIT_OK
    return run_config(args.config)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixmeasure", description="Mixing measures, norms and stirring experiments on the torus.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an initial field")
    p.add_argument("--init", required=True, help="stripes:K, checker:K or random:SEED")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--cutoff", type=int, default=4, help="band limit of random fields")
    p.add_argument("--out", required=True, help="MXB1 output file")
    p.add_argument("--csv", help="also write the values as CSV")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("norms", help="print hminus1,bv,variance,gl_energy of a field")
    p.add_argument("field")
    p.add_argument("--header", action="store_true", help="print a header line first")
    p.set_defaults(func=cmd_norms)

    p = sub.add_parser("ot", help="transport cost between the signed parts of a field")
    p.add_argument("field")
    p.add_argument("--m", type=float, default=0.0, help="reference mean of the split")
    p.add_argument("--cost", default="log", help="log, logeps:E, w1 or power:Q")
    p.add_argument("--solver", default="exact", help="exact or sinkhorn:REG")
    p.add_argument("--plan", help="write the plan as i,j,mass CSV")
    p.add_argument("--gap-tol", type=float, default=1e-9, help="largest accepted duality gap (exact solver)")
    p.set_defaults(func=cmd_ot)

    p = sub.add_parser("maxfn", help="weighted local maximal function and its estimates")
    p.add_argument("field")
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--check", help="pointwise:THETA, l1 or lp:P")
    p.add_argument("--bound", type=float, help="exit 1 if the ratio exceeds this")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write M as an MXB1 field")
    p.set_defaults(func=cmd_maxfn)

    p = sub.add_parser("simulate", help="advect an initial field and record a mixing trace")
    p.add_argument("--init", required=True)
    p.add_argument("--protocol", required=True, help="sine:A,PERIOD,SEED")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--dt", default="0.5h", help="step, or a multiple of h such as 0.5h")
    p.add_argument("--n", type=int, default=128)
    p.add_argument("--cutoff", type=int, default=4)
    p.add_argument("--observe-every", type=int, default=16)
    p.add_argument("--solver", default="exact", help="D observer: exact, sinkhorn:REG or off")
    p.add_argument("--snapshots", help="directory for MXB1 snapshots at observation times")
    p.add_argument("--out", required=True, help="trace CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check an inequality; prints a flat JSON record")
    p.add_argument("what", choices=["sandwich", "theorem1", "theorem2", "uniformity"])
    p.add_argument("traces", nargs="*", help="trace CSV files (decay and uniformity checks)")
    p.add_argument("--corpus", default="standard")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--cutoff", type=int, default=4)
    p.add_argument("--solver", default="exact")
    p.add_argument("--upper-factor", type=float, default=1.05)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("--records", help="write per-field sandwich records as CSV")
    p.add_argument("--p", default="2", help="budget exponent: 2 or inf")
    p.add_argument("--slack", type=float, default=0.1)
    p.add_argument("--bv0", type=float, help="initial perimeter (default: first trace row)")
    p.add_argument("--quantity", choices=["D", "hminus1"], default="D")
    p.add_argument("--tol", type=float, default=0.3)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="run a declarative experiment config")
    p.add_argument("config")
    p.add_argument("--dry-run", action="store_true", help="only parse and validate")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
        try:
            return args.func(args)
        except (UsageError, ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
