"""Command-line runner: ``qbsde <command> --config PATH --out DIR``.

Exit codes: 0 success, 1 a requested check failed, 2 configuration error,
3 hypothesis error, 4 report error, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io, pipeline
from .config import BUILTIN_SCENARIOS, load_config
from .exceptions import (ConfigError, HypothesisError, IntegrabilityError, ReportError,
                         StepFailureError)

log = logging.getLogger("qbsde")

EXIT_OK, EXIT_CHECKS, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_REPORT, EXIT_NUMERIC = range(6)
REPORT_FILES = ("checks.csv", "summary.csv", "solution.meta")


def _config(args):
    if args.config is None:
        raise ConfigError(f"--config is required (a file or one of {sorted(BUILTIN_SCENARIOS)})")
    cfg = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = replace(cfg, seed=args.seed)
    if args.paths is not None:
        if args.paths < 1:
            raise ConfigError("--paths must be positive")
        cfg = replace(cfg, M=args.paths)
    return cfg


def _out(args, cfg):
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args, cfg)
    paths = pipeline.simulate(cfg)
    io.export_ensemble(paths, out / "ensemble.csv", cfg.export_paths)
    io.write_sidecar(out / "ensemble.meta", {"fingerprint": paths.fingerprint, "M": paths.num_paths,
                                             "N": cfg.N, "T": cfg.T, "d": cfg.d, "seed": cfg.seed})
    print(f"simulated {paths.num_paths} paths, fingerprint {paths.fingerprint}")
    return EXIT_OK


def cmd_bounds(args):
    cfg = _config(args)
    out = _out(args, cfg)
    paths = pipeline.simulate(cfg)
    b = pipeline.bounds_for(cfg, paths)
    io.export_bounds(b, out / "bounds.csv", cfg.export_paths)
    print(f"bounds at t=0: [{b.lower[0, 0]:.6g}, {b.upper[0, 0]:.6g}] ({b.estimator})")
    return EXIT_OK


def cmd_oracle(args):
    cfg = _config(args)
    out = _out(args, cfg)
    rows = pipeline.oracle_rows(cfg)
    if rows is None:
        print(f"no closed-form solution for driver {cfg.driver_name!r}", file=sys.stderr)
        return EXIT_CHECKS
    io.export_oracle(rows, out / "oracle.csv")
    y0 = pipeline.oracle_value(cfg)[0]
    print(f"oracle Y(0) = {float(y0):.10g}")
    return EXIT_OK


def cmd_solve(args):
    cfg = _config(args)
    out = _out(args, cfg)
    paths = pipeline.simulate(cfg)
    bounds = pipeline.bounds_for(cfg, paths) if cfg.solver.clip_to_bounds else None
    sol = pipeline.solve_lsmc(cfg.driver(), cfg.terminal(), paths, cfg.solver, bounds)
    io.export_solution(sol, out / "solution.csv", cfg.export_paths)
    meta = dict(sol.metadata)
    meta.update({"scenario": cfg.scenario, "fingerprint": paths.fingerprint, "Y0": sol.Y0,
                 "Y0_se": sol.Y0_se})
    io.write_sidecar(out / "solution.meta", meta)
    print(f"Y(0) = {sol.Y0:.10g} (se {sol.Y0_se:.3g})")
    return EXIT_OK


def _verify(args, summary):
    cfg = _config(args)
    out = _out(args, cfg)
    res = pipeline.run_checks(cfg, out)
    if summary:
        (out / "config.ini").write_text(cfg.raw)
        print(pipeline.write_summary(res, out), end="")
    else:
        for r in res.reports:
            print(f"{r.check:<20} {r.scenario:<20} rate={r.violation_rate:.4g} "
                  f"threshold={r.threshold:g} {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if res.passed else EXIT_CHECKS


def cmd_verify(args):
    return _verify(args, summary=False)


def cmd_run(args):
    return _verify(args, summary=True)


def build_report(directory) -> str:
    """Consolidated text from a run directory; depends only on its files."""
    d = io.require_files(directory, REPORT_FILES)
    _, checks = io.read_rows(d / "checks.csv")
    _, summary = io.read_rows(d / "summary.csv")
    meta = io.read_sidecar(d / "solution.meta")
    parts = [f"run: scenario={meta.get('scenario', '')} fingerprint={meta.get('fingerprint', '')}",
             f"files: {', '.join(n for n in io.listing(d) if n != 'report.txt')}", ""]
    oracle = [r for r in summary if r[1] == "Y0"]
    if oracle:
        parts.append("== oracle comparison ==")
        parts.append(pipeline.format_table(oracle))
    by_check = {}
    for row in checks:
        by_check.setdefault(row[0], []).append((row[1], "violation_rate", row[2], row[3], row[4]))
    for name in sorted(by_check):
        parts.append(f"== {name} ==")
        parts.append(pipeline.format_table(by_check[name]))
    other = [r for r in summary if r[1] != "Y0" and not r[1].startswith("check:")]
    if other:
        parts.append("== statistics ==")
        parts.append(pipeline.format_table(other))
    overall = all(r[4] == "true" for r in checks)
    parts.append(f"overall: {'PASS' if overall else 'FAIL'}")
    return "\n".join(parts) + "\n"


def cmd_report(args):
    directory = Path(args.out if args.out is not None else (args.dir or "artifacts"))
    text = build_report(directory)
    (directory / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate, "bounds": cmd_bounds, "oracle": cmd_oracle, "solve": cmd_solve,
    "verify": cmd_verify, "run": cmd_run, "report": cmd_report,
}


def make_parser():
    p = argparse.ArgumentParser(prog="qbsde", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="config file or built-in scenario name")
        s.add_argument("--out", help="artifact directory")
        s.add_argument("--seed", type=int, help="override the ensemble seed")
        s.add_argument("--paths", type=int, help="override the number of paths M")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "report":
            s.add_argument("dir", nargs="?", help="artifact directory (same as --out)")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisError as exc:
        print(f"hypothesis error {exc.hypothesis}: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_REPORT
    except (IntegrabilityError, StepFailureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
