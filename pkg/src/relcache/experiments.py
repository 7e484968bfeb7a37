"""Experiment configs, NFC matching and the comparison tables behind the CLI."""
from __future__ import annotations

import configparser
import csv
import io
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import MetricsReport, analyze_trace, interval_profile, replay_policy
from .errors import BisectionFailed, InvalidConfig
from .metrics import MetricsLog
from .pipeline import Pipeline, PipelineConfig, RunResult, build_pipeline, run_no_cache, run_sampling
from .policies import PolicySpec
from .scheduler import SchedulerSpec
from .synthetic import KINDS as SYNTHETIC_KINDS
from .synthetic import synthetic_trajectory
from .trace import trace_read, trace_write

BISECT_BRACKET = (0.0, 10.0)
BISECT_ITERS = 30
NFC_TOL = 0.5


@dataclass
class ExperimentConfig:
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    policy: PolicySpec = field(default_factory=lambda: PolicySpec("rfe", order=1))
    scheduler: SchedulerSpec = field(default_factory=lambda: SchedulerSpec("rcs", tau=0.2))
    seeds: list[int] = field(default_factory=lambda: [0])
    ghost_reference: bool = False
    output_dir: Path = Path("out")
    # "pipeline" or "synthetic:<kind>" (replayed single-module trajectories)
    source: str = "pipeline"
    synthetic_dim: int = 64

    def __post_init__(self):
        if not self.seeds:
            raise InvalidConfig("at least one seed is required")
        if self.source != "pipeline":
            kind = self.source.partition(":")[2]
            if not self.source.startswith("synthetic:") or kind not in SYNTHETIC_KINDS:
                raise InvalidConfig(f"source must be 'pipeline' or synthetic:<{'|'.join(SYNTHETIC_KINDS)}>")
        self.output_dir = Path(self.output_dir)

    @property
    def synthetic_kind(self) -> Optional[str]:
        return None if self.source == "pipeline" else self.source.partition(":")[2]


def parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise InvalidConfig(f"seeds must be comma-separated integers, got {text!r}") from None


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidConfig(f"not a boolean: {text!r}")


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read an INI-style ``key = value`` file with ``[pipeline]`` and ``[experiment]`` sections."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    unknown = set(parser.sections()) - {"pipeline", "experiment"}
    if unknown:
        raise InvalidConfig(f"unknown config sections {sorted(unknown)}")
    try:
        pipe = PipelineConfig.from_mapping(dict(parser["pipeline"])) if parser.has_section("pipeline") else PipelineConfig()
    except ValueError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    kwargs: dict = {"pipeline": pipe}
    for key, raw in exp.items():
        if key == "policy":
            kwargs["policy"] = PolicySpec.parse(raw)
        elif key == "scheduler":
            kwargs["scheduler"] = SchedulerSpec.parse(raw)
        elif key == "seeds":
            kwargs["seeds"] = parse_seeds(raw)
        elif key == "ghost_reference":
            kwargs["ghost_reference"] = _parse_bool(raw)
        elif key == "output_dir":
            kwargs["output_dir"] = Path(raw)
        elif key == "source":
            kwargs["source"] = raw.strip()
        elif key == "synthetic_dim":
            kwargs["synthetic_dim"] = int(raw)
        else:
            raise InvalidConfig(f"unknown experiment key {key!r}")
    return ExperimentConfig(**kwargs)


@dataclass
class ComparisonRow:
    policy: str
    scheduler: str
    nfc_mean: float
    eps_out_mean: float
    eps_in_mean: float
    seconds: float
    per_seed: list[MetricsLog] = field(default_factory=list, repr=False)


class Evaluator:
    """Runs one (policy, scheduler) pair over every configured seed."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._pipeline: Optional[Pipeline] = None
        self._traces: dict[int, object] = {}

    @property
    def pipeline(self) -> Pipeline:
        if self._pipeline is None:
            self._pipeline = build_pipeline(self.config.pipeline)
        return self._pipeline

    def synthetic(self, seed: int):
        if seed not in self._traces:
            cfg = self.config
            self._traces[seed] = synthetic_trajectory(cfg.synthetic_kind, cfg.pipeline.T, cfg.synthetic_dim, seed)
        return self._traces[seed]

    def run_seed(
        self, policy: PolicySpec, scheduler: SchedulerSpec, seed: int, record: bool = False
    ) -> tuple[MetricsLog, Optional[RunResult]]:
        if self.config.synthetic_kind is not None:
            return replay_policy(self.synthetic(seed), policy, scheduler).log, None
        res = run_sampling(
            self.pipeline, policy, scheduler, seed, record_trace=record, ghost_reference=self.config.ghost_reference
        )
        return res.metrics, res

    def evaluate(self, policy: PolicySpec, scheduler: SchedulerSpec) -> ComparisonRow:
        start = time.perf_counter()
        logs = [self.run_seed(policy, scheduler, s)[0] for s in self.config.seeds]
        elapsed = time.perf_counter() - start
        return ComparisonRow(
            policy=policy.label,
            scheduler=scheduler.label,
            nfc_mean=float(np.mean([lg.nfc for lg in logs])),
            eps_out_mean=float(np.mean([lg.mean_eps_out() for lg in logs])),
            eps_in_mean=float(np.mean([lg.mean_eps_in() for lg in logs])),
            seconds=elapsed,
            per_seed=logs,
        )


def table_csv(rows: Sequence[ComparisonRow], timing: bool = False) -> str:
    """CSV of a comparison table; wall-clock time only on request (it is not reproducible)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = ["policy", "scheduler", "nfc_mean", "eps_out_mean", "eps_in_mean"]
    writer.writerow(head + (["seconds"] if timing else []))
    for r in rows:
        vals = [r.policy, r.scheduler, repr(r.nfc_mean), repr(r.eps_out_mean), repr(r.eps_in_mean)]
        writer.writerow(vals + ([f"{r.seconds:.3f}"] if timing else []))
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_run(config: ExperimentConfig, record: bool = False, no_cache: bool = False) -> list[Path]:
    """One run per seed; writes metrics CSV, JSON summary, final latent and optionally the trace."""
    ev = Evaluator(config)
    out = config.output_dir
    written = []
    for seed in config.seeds:
        if no_cache:
            if config.synthetic_kind is not None:
                raise InvalidConfig("--no-cache needs the pipeline source")
            res = run_no_cache(ev.pipeline, seed, record_trace=record)
            log = res.metrics
        else:
            log, res = ev.run_seed(config.policy, config.scheduler, seed, record=record)
        summary = {"seed": seed, "source": config.source, **log.summary()}
        paths = {
            out / f"metrics_seed{seed}.csv": log.to_csv(),
            out / f"summary_seed{seed}.json": json.dumps(summary, indent=2, sort_keys=True) + "\n",
        }
        if res is not None:
            paths[out / f"latent_seed{seed}.json"] = json.dumps(res.latent.tolist()) + "\n"
        for path, text in paths.items():
            _write(path, text)
            written.append(path)
        if record:
            trace = res.trace if res is not None else ev.synthetic(seed)
            path = out / f"trace_seed{seed}.jsonl"
            path.parent.mkdir(parents=True, exist_ok=True)
            trace_write(trace, path)
            written.append(path)
    return written


def cmd_sweep_tau(config: ExperimentConfig, taus: Sequence[float]) -> list[ComparisonRow]:
    if len(taus) < 2:
        raise InvalidConfig("a tau sweep needs at least two grid points")
    ev = Evaluator(config)
    scope = config.scheduler.scope if config.scheduler.kind == "rcs" else "first"
    rows = [ev.evaluate(config.policy, SchedulerSpec("rcs", tau=tau, scope=scope)) for tau in sorted(taus)]
    return rows


def match_nfc(
    measure: Callable[[SchedulerSpec], float],
    scheduler: SchedulerSpec,
    target: float,
    total_steps: int,
) -> tuple[SchedulerSpec, float]:
    """Tune the scheduler knob until the mean NFC is within 0.5 of ``target``.

    Thresholds (tau, delta) are bisected on [0, 10] for at most 30 iterations;
    the fixed interval N is scanned over 1..T. Raises BisectionFailed if no
    value gets close enough.
    """
    if scheduler.kind == "fixed":
        best = None
        for n in range(1, total_steps + 1):
            spec = scheduler.with_threshold(n)
            got = measure(spec)
            if abs(got - target) <= NFC_TOL:
                return spec, got
            if best is None or abs(got - target) < abs(best[1] - target):
                best = (spec, got)
        raise BisectionFailed(f"no interval N reaches NFC {target} (closest {best[1]} at {best[0].label})")

    lo, hi = BISECT_BRACKET
    if scheduler.kind == "distance":
        lo = 1e-12
    # NFC is non-increasing in the threshold
    nfc_lo = measure(scheduler.with_threshold(lo))
    if abs(nfc_lo - target) <= NFC_TOL:
        return scheduler.with_threshold(lo), nfc_lo
    nfc_hi = measure(scheduler.with_threshold(hi))
    if abs(nfc_hi - target) <= NFC_TOL:
        return scheduler.with_threshold(hi), nfc_hi
    if not nfc_hi < target < nfc_lo:
        raise BisectionFailed(f"target NFC {target} outside [{nfc_hi}, {nfc_lo}] over bracket [{lo}, {hi}]")
    for _ in range(BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        spec = scheduler.with_threshold(mid)
        got = measure(spec)
        if abs(got - target) <= NFC_TOL:
            return spec, got
        if got > target:
            lo = mid
        else:
            hi = mid
    raise BisectionFailed(f"bisection did not reach NFC {target} within {BISECT_ITERS} iterations")


def cmd_compare(
    config: ExperimentConfig,
    policies: Sequence[PolicySpec],
    matched_nfc: bool = False,
    target_nfc: Optional[float] = None,
) -> list[ComparisonRow]:
    if len(policies) < 2:
        raise InvalidConfig("compare needs at least two policies")
    ev = Evaluator(config)
    rows = []
    for policy in policies:
        scheduler = config.scheduler
        if matched_nfc:
            if target_nfc is None:
                raise InvalidConfig("matched NFC comparison needs a target NFC")
            measure = lambda spec, p=policy: float(np.mean([ev.run_seed(p, spec, s)[0].nfc for s in config.seeds]))
            scheduler, _ = match_nfc(measure, scheduler, target_nfc, config.pipeline.T)
        rows.append(ev.evaluate(policy, scheduler))
    return rows


def cmd_analyze(trace_path: str | os.PathLike, out_dir: str | os.PathLike) -> MetricsReport:
    """Diagnostics for a trace file; writes ``analysis.json`` and ``l2_series.csv``."""
    trace = trace_read(trace_path)
    report = analyze_trace(trace)
    out = Path(out_dir)
    _write(out / "analysis.json", json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    keys = sorted(report.l2_series)
    writer.writerow(["pair"] + keys)
    for j in range(len(trace.timesteps) - 1):
        writer.writerow([f"{trace.timesteps[j]}->{trace.timesteps[j + 1]}"] + [repr(report.l2_series[k][j]) for k in keys])
    _write(out / "l2_series.csv", buf.getvalue())
    return report


def summary_interval_profile(summary_paths: Sequence[str | os.PathLike]) -> list[float]:
    """Interval profile across the full-compute logs stored in run summaries."""
    logs = []
    for p in summary_paths:
        with open(p, encoding="utf-8") as fh:
            logs.append(json.load(fh)["full_compute_log"])
    return interval_profile(logs)
