"""Command-line driver: ``glitchbench {run,attribute,report,oracle,selftest}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from .attribution import attribute, check_against_oracle, label_sets
from .campaign import Outcome, run_campaign
from .config import ConfigFileError, load_config
from .physics import CLOCKS, EMFIGlitch, Model, affected_cycles, clock
from .report import summary_text, write_report
from .results import MalformedRecord, read_results, write_results
from .testprogs import TestId, build

SEED_ENV = "GLITCHBENCH_SEED"
CLOCK_CHOICES = ("slow", "medium", "fast-em", "fast-vfi")


def _fail(msg: str, code: int = 2) -> int:
    print(f"glitchbench: error: {msg}", file=sys.stderr)
    return code


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
    except ConfigFileError as exc:
        return _fail(str(exc))
    overrides = {}
    if args.test is not None:
        overrides["test_id"] = TestId(args.test)
    if args.clock is not None:
        overrides["clock"] = clock(args.clock)
    if args.n is not None:
        overrides["n"] = args.n
    if args.attempts is not None:
        overrides["attempts"] = args.attempts
    if args.model is not None:
        overrides["model"] = Model(args.model.capitalize())
    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            overrides["seed"] = int(env_seed, 0)
        except ValueError:
            return _fail(f"{SEED_ENV} is not an integer: {env_seed!r}")
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output"] = args.out
    if "clock" in overrides and "length_range_ns" not in overrides:
        overrides["length_range_ns"] = None  # re-derive the per-clock VFI default
    try:
        config = replace(config, **overrides)
    except ValueError as exc:
        return _fail(str(exc))
    out = Path(config.output or "results.jsonl")
    config = replace(config, output=None)
    start = time.time()
    records, summary = run_campaign(config, workers=args.workers)
    if args.attribute:
        for r in records:
            if r.outcome is Outcome.SUCCESSFUL:
                r.labels = label_sets(attribute(r))
    try:
        write_results(out, records)
        summary_path = out.with_name(out.name + ".summary.json")
        summary_path.write_text(json.dumps({"config": config.to_dict(), **summary.to_dict()}, indent=2, default=str) + "\n")
    except OSError as exc:
        return _fail(f"cannot write {out}: {exc.strerror or exc}")
    print(
        f"{config.attack.value} {config.clock.label} ({config.clock.mhz:g} MHz) {config.test_id.label} n={config.n}: "
        f"{summary.totals} success_rate={summary.success_rate:.4f} in {time.time() - start:.1f}s -> {out}"
    )
    return 0


def _read(path) -> list | int:
    try:
        return read_results(Path(path))
    except OSError as exc:
        return _fail(f"cannot read {path}: {exc.strerror or exc}")
    except MalformedRecord as exc:
        return _fail(f"{path}: malformed record at {exc}")


def cmd_attribute(args) -> int:
    records = _read(args.results)
    if isinstance(records, int):
        return records
    unexplained = successful = 0
    for r in records:
        if r.outcome is not Outcome.SUCCESSFUL or r.t0 is None:
            continue
        successful += 1
        explanations = attribute(r)
        r.labels = label_sets(explanations)
        if explanations[0].unexplained:
            unexplained += 1
        if args.verbose:
            t1 = "-" if r.t1 is None else f"{r.t1:#x}"
            print(f"#{r.index} {r.test_id.label} t0={r.t0:#x} t1={t1}")
            for e in explanations:
                print(f"    [{e.event_count}] {e}")
    out = Path(args.out or args.results)
    try:
        write_results(out, records)
    except OSError as exc:
        return _fail(f"cannot write {out}: {exc.strerror or exc}")
    print(f"attributed {successful} successful record(s); {unexplained} unexplained -> {out}")
    return 0


def cmd_report(args) -> int:
    records = _read(args.results)
    if isinstance(records, int):
        return records
    print(summary_text(records))
    out_dir = Path(args.out_dir) if args.out_dir else Path(args.results).parent
    stem = Path(args.results).stem
    try:
        paths = write_report(records, out_dir, stem, svg=args.svg)
    except (OSError, RuntimeError) as exc:
        return _fail(str(exc))
    for p in paths:
        print(f"wrote {p}")
    return 0


ORACLE_CASES = ((TestId.REGISTER_LOOP, 50), (TestId.MEMORY_LOOP, 50), (TestId.UNROLLED_LOOP, 32))


def cmd_oracle(args) -> int:
    cases = [(TestId(args.test), args.n)] if args.test else ORACLE_CASES
    ok = True
    for test, n in cases:
        start = time.time()
        checked, failures = check_against_oracle(test, n)
        ok &= not failures
        print(f"{test.label} n={n}: {checked} successful hypotheses, {len(failures)} unexplained ({time.time() - start:.1f}s)")
        for res, expls in failures[:10]:
            h = res.hypothesis
            print(f"    {h.surface.value} {h.effect} on instruction {h.index} occurrence {h.occurrence}: {[str(e) for e in expls[:3]]}")
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    ok = True
    for test in TestId:
        for n in (1, 2, 300, 10000):
            p = build(test, n)
            good = p.expected(p.golden_state)
            ok &= good
            durations = " ".join(f"{c.label}={p.golden_cycles * c.period_ns:.0f}ns" for c in CLOCKS.values())
            print(f"{'ok ' if good else 'BAD'} {test.label} n={n}: {p.golden_cycles} cycles, "
                  f"{p.golden_state.flash_fetch_count} flash fetches, {durations}")
    for label, want in (("slow", 0.8), ("medium", 4.5), ("fast_emfi", 16.0)):
        _, span = affected_cycles(EMFIGlitch(power_pct=50, delay_ns=0, x_um=0, y_um=0), CLOCKS[label])
        good = abs(span - want) / want < 1e-9
        ok &= good
        print(f"{'ok ' if good else 'BAD'} 50 ns pulse at {CLOCKS[label].mhz:g} MHz spans {span:.6f} cycles (want {want})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glitchbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a campaign from a config file")
    p.add_argument("config", help="YAML config path, or a shipped name such as emfi_slow")
    p.add_argument("--test", type=int, choices=(1, 2, 3), help="1 register loop, 2 memory loop, 3 unrolled loop")
    p.add_argument("--clock", choices=CLOCK_CHOICES)
    p.add_argument("--n", type=int)
    p.add_argument("--attempts", type=int)
    p.add_argument("--seed", type=lambda s: int(s, 0))
    p.add_argument("--model", choices=("charge", "sampling"))
    p.add_argument("--out", help="results file (overrides the config's output)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--attribute", action="store_true", help="label successful records after the run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attribute", help="label successful records of a results file")
    p.add_argument("results")
    p.add_argument("--out", help="write here instead of rewriting the input")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("report", help="summary and sensitivity-map data")
    p.add_argument("results")
    p.add_argument("--out-dir")
    p.add_argument("--svg", action="store_true", help="also render SVG scatter plots (needs matplotlib)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle", help="cross-check attribution against the brute-force oracle")
    p.add_argument("--test", type=int, choices=(1, 2, 3))
    p.add_argument("--n", type=int, default=50)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("selftest", help="golden runs and cycle-conversion checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
