"""``wonder-sim`` command line: run, validate and oracle."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .errors import ParseError, ValidationError
from .oracle import check_topology
from .randomgen import random_topology
from .scenario import load_scenario

EXIT_OK, EXIT_FAIL, EXIT_INVALID = 0, 1, 2


def _load(args):
    try:
        return load_scenario(args.scenario, lax=getattr(args, "lax", False))
    except ValidationError as exc:
        print(f"invalid scenario {args.scenario}:", file=sys.stderr)
        for path, msg in exc.problems:
            print(f"  {path}: {msg}", file=sys.stderr)
        return None
    except ParseError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return None


def cmd_run(args) -> int:
    from .report import metrics_table, render_figures, write_trace_dir
    from .sim import run

    scenario = _load(args)
    if scenario is None:
        return EXIT_INVALID
    result = run(scenario, seed=args.seed)
    if args.trace_dir:
        out = Path(args.trace_dir)
        write_trace_dir(result, out, args.dump_paths)
        if not args.no_figures:
            render_figures(result, out)
    elif args.dump_paths:
        sys.stderr.write(result.sim.oerc.db.dump_json())
    m = result.metrics
    if args.json_metrics:
        doc = m.to_json()
        doc["digests"] = result.digests()
        print(json.dumps(doc, indent=2, sort_keys=True))
    else:
        sys.stdout.write(metrics_table(result))
    if m.exit_code:
        print(
            f"FAIL: {len(m.violations)} violation(s), {m.unexpected_drops} unexpected drop(s), "
            f"{len(m.unexpected_failures)} unexpected failure(s), {len(m.expect_mismatches)} expectation mismatch(es)",
            file=sys.stderr,
        )
    return m.exit_code


def cmd_validate(args) -> int:
    scenario = _load(args)
    if scenario is None:
        return EXIT_INVALID
    topo = scenario.topology
    print(f"ok: {scenario.name}: {len(topo.elements)} elements, {len(topo.links)} links, "
          f"{len(scenario.catalog)} classes, {len(scenario.events)} events")
    return EXIT_OK


def cmd_oracle(args) -> int:
    t0 = time.perf_counter()
    targets = []
    if args.random:
        base = args.seed or 0
        targets += [(f"random seed {base + i}", random_topology(base + i), None) for i in range(args.random)]
    if args.scenario:
        scenario = _load(args)
        if scenario is None:
            return EXIT_INVALID
        targets.append((scenario.name, scenario.topology, scenario))
    if not targets:
        print("oracle: give a scenario or --random N", file=sys.stderr)
        return EXIT_INVALID
    from .traffic_classes import DEFAULT_CATALOG

    total, bad = 0, 0
    for label, topo, scenario in targets:
        catalog = scenario.catalog if scenario else DEFAULT_CATALOG
        air = scenario.defaults.air_rtt_us if scenario else 2000
        n, diffs = check_topology(topo, catalog, air)
        total += n
        bad += len(diffs)
        if diffs or args.verbose:
            print(f"{label}: {n} records, {len(diffs)} diff(s)")
        for d in diffs:
            print(f"  {d}")
    dt = time.perf_counter() - t0
    print(f"oracle: {len(targets)} topolog{'y' if len(targets) == 1 else 'ies'}, {total} records, "
          f"{bad} diff(s) in {dt:.2f}s")
    return EXIT_FAIL if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wonder-sim", description="Deterministic MEC data-plane simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and report metrics")
    r.add_argument("scenario", help="scenario JSON file or builtin scenario name")
    r.add_argument("--dump-paths", action="store_true", help="write the controller's path database")
    r.add_argument("--trace-dir", metavar="DIR", help="write logs, traces, metrics and figures here")
    r.add_argument("--lax", action="store_true", help="ignore unknown keys")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--json-metrics", action="store_true", help="print metrics as JSON")
    r.add_argument("--no-figures", action="store_true", help="skip PNG rendering in --trace-dir")
    r.set_defaults(fn=cmd_run)

    v = sub.add_parser("validate", help="parse and validate a scenario")
    v.add_argument("scenario")
    v.add_argument("--lax", action="store_true")
    v.set_defaults(fn=cmd_validate)

    o = sub.add_parser("oracle", help="diff the controller against exhaustive enumeration")
    o.add_argument("scenario", nargs="?")
    o.add_argument("--random", type=int, default=0, metavar="N", help="also check N random topologies")
    o.add_argument("--seed", type=int, default=0, help="first seed for --random")
    o.add_argument("--lax", action="store_true")
    o.add_argument("-v", "--verbose", action="store_true")
    o.set_defaults(fn=cmd_oracle)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
