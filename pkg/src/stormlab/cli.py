"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 verification failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import parse_config
from .errors import ConfigError
from .harness import FAULT_NAMES, execute, summarize, sweep_convergence, verify

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_VERIFY = 2
EXIT_IO = 3


def _parse_t_list(values) -> list[int]:
    out = []
    for chunk in values:
        for part in str(chunk).split(","):
            part = part.strip()
            if part:
                out.append(int(part))
    return out


def _apply_common(cfg, args):
    if args.seed_offset:
        cfg = replace(cfg, seeds=[s + args.seed_offset for s in cfg.seeds])
    if args.trace_every is not None:
        cfg = replace(cfg, trace_every=args.trace_every)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def _add_common(p):
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--seed-offset", type=int, default=0,
                   help="added to every seed in the config")
    p.add_argument("--trace-every", type=int, default=None,
                   help="trace row thinning (overrides the config)")
    p.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stormlab",
        description="Adaptive variance-reduced optimizer benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the (eta x seed) matrix of a config")
    p_run.add_argument("config")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="convergence study across horizons")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--T", nargs="+", required=True, metavar="T",
                         help="horizon list, e.g. --T 1000 10000 100000")
    _add_common(p_sweep)

    p_verify = sub.add_parser(
        "verify", help="run the built-in identity and degeneracy checks")
    p_verify.add_argument("--fault", choices=FAULT_NAMES, default=None,
                          help="inject a known defect; checks must catch it")
    p_verify.add_argument("--out", help="directory for the verification report")

    p_sum = sub.add_parser("summarize", help="recompute and cross-check a results directory")
    p_sum.add_argument("directory")
    p_sum.add_argument("--no-plots", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _apply_common(parse_config(args.config), args)
            summary = execute(cfg, jobs=args.jobs, make_figures=not args.no_plots)
            best = summary["best_eta"]
            print(f"wrote {cfg.out_dir}/summary.json "
                  f"({len(summary['runs'])} eta values, best_eta={best})")
            return EXIT_OK
        if args.command == "sweep":
            cfg = _apply_common(parse_config(args.config), args)
            report = sweep_convergence(cfg, _parse_t_list(args.T), jobs=args.jobs,
                                       make_figures=not args.no_plots)
            print(f"slope={report['slope']:.4f} r2={report['r2']:.4f} "
                  f"({len(report['points'])} horizons) -> {cfg.out_dir}/sweep_report.json")
            return EXIT_OK
        if args.command == "verify":
            report = verify(fault=args.fault, out_dir=args.out)
            for check in report["checks"]:
                mark = "PASS" if check["passed"] else "FAIL"
                print(f"[{mark}] {check['check']}: {check['detail']}")
            if report["all_passed"]:
                print(f"all {len(report['checks'])} checks passed"
                      + (f" (fault {args.fault!r} detected)" if args.fault else ""))
                return EXIT_OK
            print("verification FAILED")
            return EXIT_VERIFY
        if args.command == "summarize":
            report = summarize(args.directory, make_figures=not args.no_plots)
            print(f"checked {report['runs_checked']} runs in {args.directory}")
            for line in report["mismatches"]:
                print(f"MISMATCH {line}")
            if report["consistent"]:
                print("summary metrics match the traces")
                return EXIT_OK
            return EXIT_VERIFY
    except ConfigError as err:
        for line in err.violations:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
