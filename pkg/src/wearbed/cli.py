"""Command-line entry point: run, sweep, report and validate."""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

from .config import load_json, load_scenario, scenario_from_dict, sweep_from_dict
from .errors import ValidationError
from .harness import run_scenario, run_sweep
from .scenarios import builtin_scenarios, stress_default

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("wearbed")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 unsigned bits, got {text}")
    return value


def _scenario(ref: str):
    builtins = builtin_scenarios()
    if ref in builtins and not os.path.exists(ref):
        cfg = builtins[ref]
        if ref == "stress_default":
            raise ValidationError(["stress_default is a sweep; use the sweep command"])
        return cfg
    return load_scenario(ref)


def _sweep(ref: str, duration_s):
    if ref == "stress_default" and not os.path.exists(ref):
        return stress_default() if duration_s is None else stress_default(duration_s)
    sweep = sweep_from_dict(load_json(ref))
    if duration_s is not None:
        sweep = replace(sweep, base=replace(sweep.base, duration_s=duration_s))
    return sweep


def cmd_run(args) -> int:
    cfg = _scenario(args.scenario)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    report = run_scenario(cfg, args.out, trace=args.trace)
    _print_summary(os.path.join(args.out, "metrics.csv"))
    if report.failover:
        print(f"failover transitions: {len(report.failover)}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    sweep = _sweep(args.config, args.duration_s)
    if args.seed is not None:
        sweep = replace(sweep, base=replace(sweep.base, seed=args.seed))
    result = run_sweep(sweep, args.out, jobs=args.jobs, cell_messages=args.cell_messages)
    print(f"{len(result.reports)} cells completed, {len(result.failures)} failed; "
          f"results in {args.out}")
    for cell, msg in result.failures:
        print(f"  failed cell {cell}: {msg.splitlines()[0]}", file=sys.stderr)
    return EXIT_RUNTIME if result.failures else EXIT_OK


def _print_summary(path) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = ["scenario", "server_config", "n_tags", "freq_hz", "kind", "sent", "received", "plr",
            "delay_p50_us", "delay_p95_us", "acc_mean_filtered_m"]
    table = [cols] + [[r.get(c, "") for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(cols))]
    for row in table:
        print("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())


def cmd_report(args) -> int:
    path = os.path.join(args.in_dir, "metrics.csv")
    if not os.path.exists(path):
        print(f"no metrics.csv in {args.in_dir}", file=sys.stderr)
        return EXIT_RUNTIME
    _print_summary(path)
    return EXIT_OK


def cmd_validate(args) -> int:
    data = load_json(args.scenario)
    if isinstance(data, dict) and "base" in data:
        sweep_from_dict(data)
    else:
        scenario_from_dict(data)
    print(f"{args.scenario}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wearbed", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("--scenario", required=True, help="scenario JSON file or built-in name")
    r.add_argument("--seed", type=_u64, default=None, help="override the scenario seed")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--trace", action="store_true", help="also write trace.tsv")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run a tags x frequency x server-config grid")
    s.add_argument("--config", required=True, help="sweep JSON file or stress_default")
    s.add_argument("--seed", type=_u64, default=None, help="override the base seed")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    s.add_argument("--duration-s", type=float, default=None, help="override per-cell duration")
    s.add_argument("--cell-messages", action="store_true",
                   help="also write messages.csv for every cell")
    s.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="print the metrics summary of an output directory")
    rep.add_argument("--in", dest="in_dir", required=True)
    rep.set_defaults(func=cmd_report)

    v = sub.add_parser("validate", help="check a scenario or sweep file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
