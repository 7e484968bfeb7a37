"""``relcache`` command line: run, record, sweep-tau, compare, analyze.

Exit codes: 0 success, 1 usage error, 2 runtime failure, 3 format error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import traceback
from dataclasses import replace
from pathlib import Path

from .errors import FormatError, InvalidConfig, RelCacheError
from .experiments import (
    ExperimentConfig,
    cmd_analyze,
    cmd_compare,
    cmd_run,
    cmd_sweep_tau,
    load_config,
    parse_seeds,
    table_csv,
)
from .policies import PolicySpec
from .scheduler import SchedulerSpec


EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_FORMAT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _shared(p: argparse.ArgumentParser, multi_policy: bool = False) -> None:
    p.add_argument("--config", help="key = value config file with [pipeline]/[experiment] sections")
    p.add_argument("--seed", help="comma-separated sampling seeds, e.g. 0,1,2")
    if multi_policy:
        p.add_argument("--policy", action="append", help="policy spec; repeat for each policy compared")
    else:
        p.add_argument("--policy", help="reuse | linear:w=<c>|ramp | taylor:m=<int> | rfe:m=<int>")
    p.add_argument("--scheduler", help="fixed:N=<int> | distance:delta=<float> | rcs:tau=<float>[,scope=first|all]")
    p.add_argument("--out", help="output directory")
    p.add_argument("--ghost-reference", action="store_true", help="also compute predicted modules to log output errors")
    p.add_argument("--no-cache", action="store_true", help="full compute at every step (reference run)")
    p.add_argument("--source", help="pipeline | synthetic:<kind>")
    g = p.add_argument_group("pipeline overrides")
    g.add_argument("--depth", type=int)
    g.add_argument("--width", type=int)
    g.add_argument("--seq-len", type=int)
    g.add_argument("--steps", type=int, dest="T", help="number of denoising steps T")
    g.add_argument("--pipeline-seed", type=int)
    g.add_argument("--alpha-schedule", choices=("linear", "cosine"))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relcache", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("run", "sample once per seed and write metrics"), ("record", "run and write traces")):
        p = sub.add_parser(name, help=help_)
        _shared(p)

    p = sub.add_parser("sweep-tau", help="NFC and errors over a grid of RCS thresholds")
    _shared(p)
    p.add_argument("--taus", required=True, help="comma-separated thresholds; 'inf' allowed")
    p.add_argument("--timing", action="store_true", help="include wall-clock seconds in the CSV")

    p = sub.add_parser("compare", help="compare policies, optionally at matched NFC")
    _shared(p, multi_policy=True)
    p.add_argument("--matched-nfc", action="store_true")
    p.add_argument("--target-nfc", type=float)
    p.add_argument("--timing", action="store_true", help="include wall-clock seconds in the CSV")

    p = sub.add_parser("analyze", help="diagnostics for a recorded trace")
    p.add_argument("trace", help="trace file (JSON lines)")
    p.add_argument("--out", help="output directory")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {
        k: v
        for k, v in (
            ("depth", args.depth),
            ("width", args.width),
            ("seq_len", args.seq_len),
            ("T", args.T),
            ("seed", args.pipeline_seed),
            ("alpha_schedule", args.alpha_schedule),
        )
        if v is not None
    }
    pipeline = replace(cfg.pipeline, **overrides) if overrides else cfg.pipeline
    changes: dict = {"pipeline": pipeline}
    if args.seed:
        changes["seeds"] = parse_seeds(args.seed)
    if isinstance(args.policy, str):
        changes["policy"] = PolicySpec.parse(args.policy)
    if args.scheduler:
        changes["scheduler"] = SchedulerSpec.parse(args.scheduler)
    if args.out:
        changes["output_dir"] = Path(args.out)
    if args.ghost_reference:
        changes["ghost_reference"] = True
    if args.source:
        changes["source"] = args.source
    return replace(cfg, **changes)


def _parse_taus(text: str) -> list[float]:
    taus = []
    for part in filter(None, (s.strip() for s in text.split(","))):
        try:
            val = float(part)
        except ValueError:
            raise InvalidConfig(f"bad tau {part!r}") from None
        if math.isnan(val) or val < 0:
            raise InvalidConfig(f"tau must be a non-negative number, got {part!r}")
        taus.append(val)
    return taus


def _emit_table(rows, out_dir: Path, name: str, timing: bool) -> None:
    text = table_csv(rows, timing=timing)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text, encoding="utf-8")
    sys.stdout.write(table_csv(rows, timing=True))


def dispatch(args) -> int:
    if args.command == "analyze":
        out = Path(args.out or "analysis")
        report = cmd_analyze(args.trace, out)
        print(json.dumps({k: v for k, v in report.summary().items() if k != "interval_profile"}, indent=2))
        return EXIT_OK

    # ghost reference is needed for output errors in tables
    cfg = _experiment_config(args)
    if args.command in ("sweep-tau", "compare") and not cfg.ghost_reference:
        cfg = replace(cfg, ghost_reference=True)

    if args.command in ("run", "record"):
        if args.policy is not None and not isinstance(args.policy, str):
            raise UsageError("run takes a single --policy")
        paths = cmd_run(cfg, record=args.command == "record", no_cache=args.no_cache)
        for p in paths:
            print(p)
        return EXIT_OK

    if args.no_cache:
        raise UsageError("--no-cache only applies to run/record")

    if args.command == "sweep-tau":
        rows = cmd_sweep_tau(cfg, _parse_taus(args.taus))
        _emit_table(rows, cfg.output_dir, "sweep_tau.csv", args.timing)
        return EXIT_OK

    policies = [PolicySpec.parse(p) for p in (args.policy or [])]
    if len(policies) < 2:
        raise UsageError("compare needs at least two --policy flags")
    if args.matched_nfc and args.target_nfc is None:
        raise UsageError("--matched-nfc requires --target-nfc")
    rows = cmd_compare(cfg, policies, matched_nfc=args.matched_nfc, target_nfc=args.target_nfc)
    _emit_table(rows, cfg.output_dir, "compare.csv", args.timing)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"relcache: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return dispatch(args)
    except UsageError as exc:
        print(f"relcache: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"relcache: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except InvalidConfig as exc:
        print(f"relcache: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RelCacheError, OSError, ValueError) as exc:
        print(f"relcache: {_component(exc)} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _component(exc: BaseException) -> str:
    """Innermost relcache module on the traceback."""
    name = "relcache"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        mod = frame.f_globals.get("__name__", "")
        if mod.startswith("relcache."):
            name = mod
    return name


if __name__ == "__main__":
    sys.exit(main())
