"""Per-step run log shared by online sampling and offline replay."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional


@dataclass
class StepMetrics:
    t: int
    decision: str
    trigger_value: float
    eps_in: Optional[float] = None
    accumulated_error: float = 0.0
    # one entry per module; None when no reference output was available
    eps_out: Optional[list[float]] = None

    @property
    def eps_out_mean(self) -> Optional[float]:
        if self.eps_out is None:
            return None
        return sum(self.eps_out) / len(self.eps_out)


@dataclass
class MetricsLog:
    policy: str
    scheduler: str
    steps: list[StepMetrics] = field(default_factory=list)
    full_compute_log: list[int] = field(default_factory=list)
    warmup: int = 0

    @property
    def nfc(self) -> int:
        return len(self.full_compute_log)

    @property
    def intervals(self) -> list[int]:
        log = self.full_compute_log
        return [a - b for a, b in zip(log, log[1:])]

    def eps_out_series(self) -> list[Optional[float]]:
        return [s.eps_out_mean for s in self.steps]

    def mean_eps_out(self) -> float:
        """Mean output error over predicted steps (0 when every step was computed)."""
        vals = [s.eps_out_mean for s in self.steps if s.decision == "predict"]
        if any(v is None for v in vals):
            return math.nan
        return sum(vals) / len(vals) if vals else 0.0

    def mean_eps_in(self) -> float:
        vals = [s.eps_in for s in self.steps if s.decision == "predict" and s.eps_in is not None]
        return sum(vals) / len(vals) if vals else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "decision", "trigger_value", "eps_in", "eps_out_mean"])
        for s in self.steps:
            writer.writerow([s.t, s.decision, _fmt(s.trigger_value), _fmt(s.eps_in), _fmt(s.eps_out_mean)])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "policy": self.policy,
            "scheduler": self.scheduler,
            "nfc": self.nfc,
            "warmup": self.warmup,
            "full_compute_log": list(self.full_compute_log),
            "intervals": self.intervals,
            "mean_eps_out": _json_float(self.mean_eps_out()),
            "mean_eps_in": self.mean_eps_in(),
        }


def _fmt(x: Optional[float]) -> str:
    return "" if x is None else repr(float(x))


def _json_float(x: float) -> Optional[float]:
    return None if math.isnan(x) else x
