"""Command-line entry point.

Exit codes: 0 success, 1 an asserted check failed, 2 usage/config error,
3 numerical blow-up in at least one sample.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .. import analysis as an
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .parallel import RunRecord, resolve_workers, run_parallel

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_BLOWUP = 0, 1, 2, 3

# subcommand -> allowed kinds (first entry is the default)
SUBCOMMAND_KINDS = {
    "simulate": ("deterministic-ladder", "stochastic-error", "energy-functional"),
    "convolution-stats": ("convolution-scaling",),
    "spectral-estimate": ("spectral-estimate",),
    "interp-check": ("interp-inequality",),
    "apriori-check": ("apriori-check",),
    "event-prob": ("event-probability",),
    "trace-check": ("trace-check",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stochch", description="Stochastic Cahn-Hilliard simulation and verification suite")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, dotted keys, JSON values")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--workers", type=int, help="worker processes (default $SCH_WORKERS or 1)")
        p.add_argument("--seed", type=int, help="base seed (overrides base_seed)")

    for name in SUBCOMMAND_KINDS:
        common(sub.add_parser(name, help=f"run a {'/'.join(SUBCOMMAND_KINDS[name])} experiment"))
    rf = sub.add_parser("rate-fit", help="log-log regression of (eps, value) pairs")
    rf.add_argument("input", nargs="?", help="CSV with columns eps,value (default: --set points=...)")
    rf.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    rf.add_argument("--out", help="output directory")
    rep = sub.add_parser("report", help="collect run records into a verification report")
    rep.add_argument("dirs", nargs="*", help="directories searched for run_record.json")
    rep.add_argument("--out", help="report path (default verification_report.json)")
    return parser


def _config_for(args, command: str) -> ExperimentConfig:
    kinds = SUBCOMMAND_KINDS[command]
    base = {"kind": kinds[0], "epsilon_ladder": [0.1]}
    cfg = load_config(args.config, args.overrides, base)
    if cfg.kind not in kinds:
        raise ConfigError(f"subcommand {command!r} cannot run kind {cfg.kind!r}")
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.base_seed = args.seed
        cfg.validate()
    return cfg


def _summarise(checks) -> int:
    failed = 0
    for c in checks:
        status = "PASS" if c["holds"] else "FAIL"
        failed += not c["holds"]
        print(f"[{status}] {c['name']}: lhs={c.get('lhs')} rhs={c.get('rhs')}")
    return failed


def _rate_fit(args) -> int:
    opts = apply_overrides({}, args.overrides)
    if args.input:
        with open(args.input) as fh:
            rows = [r for r in csv.reader(fh) if r]
        if rows and not _is_number(rows[0][0]):
            rows = rows[1:]
        points = [(float(r[0]), float(r[1])) for r in rows]
    elif "points" in opts:
        points = [tuple(p) for p in opts["points"]]
    else:
        raise ConfigError("rate-fit needs an input CSV or --set points=[[eps,value],...]")
    start = time.perf_counter()
    fit = an.rate_fit(points)
    expected = opts.get("expected_slope")
    tol = float(opts.get("tol", 0.2))
    holds = expected is None or abs(fit.slope - float(expected)) <= tol
    rec = an.VerificationRecord("rate-fit", {"expected_slope": expected, "tol": tol}, fit.slope, expected, None, holds, len(points), fit.slope_stderr)
    record = RunRecord(
        config={"kind": "rate-fit", "points": points, **{k: v for k, v in opts.items() if k != "points"}},
        samples=[], aggregates={}, rate_fits={"fit": asdict(fit)}, checks=[rec.as_dict()],
        wall_clock=time.perf_counter() - start,
    )
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    record.write(out / "run_record.json")
    print(f"slope={fit.slope:.6g} intercept={fit.intercept:.6g} r2={fit.r_squared:.6g}")
    return EXIT_OK if _summarise(record.checks) == 0 else EXIT_CHECK


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _report(args) -> int:
    dirs = [Path(d) for d in (args.dirs or ["."])]
    records = []
    for d in dirs:
        for path in sorted(d.rglob("run_record.json")):
            rr = RunRecord.read(path)
            for c in rr.checks:
                records.append(an.VerificationRecord(**c))
    if not records:
        print("no run records found", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out or "verification_report.json")
    an.write_report(records, out)
    failed = _summarise([r.as_dict() for r in records])
    print(f"{len(records) - failed}/{len(records)} checks hold; report written to {out}")
    return EXIT_OK if failed == 0 else EXIT_CHECK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "rate-fit":
            return _rate_fit(args)
        if args.command == "report":
            return _report(args)
        cfg = _config_for(args, args.command)
        workers = resolve_workers(args.workers)
    except (ConfigError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"stochch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    record = run_parallel(cfg, workers)
    failed = _summarise(record.checks)
    print(f"wall clock {record.wall_clock:.1f}s; record written to {Path(cfg.output_dir) / 'run_record.json'}")
    if record.failures:
        print(f"{record.failures} sample(s) blew up", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK if failed == 0 else EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
