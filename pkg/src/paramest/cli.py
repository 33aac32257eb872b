"""Command-line front end for the scenario harness.

Subcommands:
  run <scenario.toml>      run one scenario, write CSV + report
  compare <dir>            run every scenario in a directory, grouped by family
  check-excitation <csv>   excitation/identifiability certificate of a trace

Exit codes: 0 success, 2 validation error, 3 numeric divergence (report
still written), 4 I/O error.
"""
from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .numcore import TimeGrid
from .excitation import RegressorTrace, check_ie, check_identifiability
from .scenarios import (
    ScenarioError,
    comparison_csv,
    compare_runs,
    format_comparison,
    load_scenario,
    run_scenario,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGED = 3
EXIT_IO = 4


def _apply_overrides(sc, args):
    if getattr(args, "h", None) is not None or getattr(args, "t_end", None) is not None:
        h = args.h if args.h is not None else sc.grid.h
        if sc.mode == "ct":
            t_end = args.t_end if args.t_end is not None else sc.grid.n_steps * sc.grid.h
            sc.grid = TimeGrid(h=h, n_steps=int(round(t_end / h)))
        else:
            sc.grid = TimeGrid(h=1.0, n_steps=int(args.t_end) if args.t_end is not None else sc.grid.n_steps)


def _print_report(report):
    print(f"scenario {report.name}: diverged={report.diverged}")
    print(f"  final ||err|| = {report.final_err:.6g}")
    print(f"  sup ||err||   = {report.sup_err:.6g}")
    print(f"  t_conv(1%)    = {report.t_conv:.6g}")
    print(f"  min |Delta| after excitation horizon = {report.delta_min_after_tc:.6g}")
    print(f"  wall seconds  = {report.wall_seconds:.3f}")
    if report.csv_path:
        print(f"  csv: {report.csv_path}")


def cmd_run(args):
    try:
        sc = load_scenario(args.scenario)
        _apply_overrides(sc, args)
        report, _ = run_scenario(sc, out_dir=args.out_dir)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    _print_report(report)
    return EXIT_DIVERGED if report.diverged else EXIT_OK


def cmd_compare(args):
    try:
        paths = sorted(
            os.path.join(args.directory, f)
            for f in os.listdir(args.directory)
            if f.endswith(".toml")
        )
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if not paths:
        print("error: no scenario files found", file=sys.stderr)
        return EXIT_VALIDATION
    families = {}
    any_diverged = False
    try:
        for path in paths:
            sc = load_scenario(path)
            _apply_overrides(sc, args)
            report, _ = run_scenario(sc, out_dir=args.out_dir)
            any_diverged |= report.diverged
            families.setdefault(sc.family, []).append(report)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except IOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for family, reports in families.items():
        header, rows = compare_runs(reports)
        print(f"family {family}:")
        print(format_comparison(header, rows))
        if args.out_dir:
            comparison_csv(header, rows, args.out_dir, f"compare_{family}.csv")
        print()
    return EXIT_DIVERGED if any_diverged else EXIT_OK


def cmd_check_excitation(args):
    try:
        data = np.genfromtxt(args.trace, delimiter=",", names=True)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    names = list(data.dtype.names or [])
    if len(names) < 2 or names[0] != "time":
        print("error: trace CSV needs a 'time' column followed by regressor columns", file=sys.stderr)
        return EXIT_VALIDATION
    t = np.atleast_1d(data["time"])
    phi = np.column_stack([np.atleast_1d(data[n]) for n in names[1:]])
    if t.size < 2:
        print("error: trace too short", file=sys.stderr)
        return EXIT_VALIDATION
    h = float(t[1] - t[0])
    mode = "dt" if args.dt else "ct"
    grid = TimeGrid(h=h if mode == "ct" else 1.0, n_steps=t.size - 1)
    trace = RegressorTrace(grid, phi, mode)
    cert = check_ie(trace, threshold=args.threshold)
    ident, picks = check_identifiability(trace)
    print(f"columns: {names[1:]}")
    print(f"interval excitation: excited={cert.excited} level={cert.level:.6g} horizon={cert.horizon:.6g}")
    print(f"identifiability: {ident} (sample indices {picks})")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(prog="paramest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out-dir", default="out")
    p_run.add_argument("--h", type=float, default=None, help="override grid step")
    p_run.add_argument("--t-end", type=float, default=None, help="override horizon")
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="run all scenarios in a directory")
    p_cmp.add_argument("directory")
    p_cmp.add_argument("--out-dir", default="out")
    p_cmp.add_argument("--h", type=float, default=None)
    p_cmp.add_argument("--t-end", type=float, default=None)
    p_cmp.set_defaults(func=cmd_compare)

    p_chk = sub.add_parser("check-excitation", help="excitation certificate of a CSV trace")
    p_chk.add_argument("trace")
    p_chk.add_argument("--threshold", type=float, default=None)
    p_chk.add_argument("--dt", action="store_true", help="treat samples as a DT sequence")
    p_chk.set_defaults(func=cmd_check_excitation)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
