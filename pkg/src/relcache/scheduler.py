"""Per-step full-compute vs. predict decisions.

Three schedulers are available: a fixed interval, a threshold on the distance
between the current and the last cached input, and relational cache
scheduling (RCS), which accumulates the relative L1 error of a Taylor
forecast of the module *input* and triggers a full compute once the running
sum exceeds ``tau``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientHistory, InvalidConfig, ZeroReference
from .features import newton_predict, rel_l1_error
from .policies import ModuleCache, _parse_opts, _reject_extra


class Action(str, enum.Enum):
    FULL = "full"
    PREDICT = "predict"


@dataclass(frozen=True)
class SchedulerSpec:
    kind: str
    interval: int = 1
    delta: float = 0.0
    tau: float = 0.0
    scope: str = "first"

    def __post_init__(self):
        if self.kind not in ("fixed", "distance", "rcs"):
            raise InvalidConfig(f"unknown scheduler kind {self.kind!r}")
        if self.kind == "fixed" and self.interval < 1:
            raise InvalidConfig("interval N must be >= 1")
        if self.kind == "distance" and not self.delta > 0:
            raise InvalidConfig("distance threshold must be positive")
        if self.kind == "rcs" and not self.tau >= 0:
            raise InvalidConfig("tau must be non-negative")
        if self.scope not in ("first", "all"):
            raise InvalidConfig(f"scope must be 'first' or 'all', got {self.scope!r}")

    @property
    def label(self) -> str:
        if self.kind == "fixed":
            return f"fixed:N={self.interval}"
        if self.kind == "distance":
            return f"distance:delta={self.delta:g}"
        scope = ",scope=all" if self.scope == "all" else ""
        return f"rcs:tau={self.tau:g}{scope}"

    def with_threshold(self, value: float) -> "SchedulerSpec":
        """Copy with the tunable knob (N, delta or tau) replaced."""
        if self.kind == "fixed":
            return SchedulerSpec("fixed", interval=int(value))
        if self.kind == "distance":
            return SchedulerSpec("distance", delta=float(value))
        return SchedulerSpec("rcs", tau=float(value), scope=self.scope)

    @classmethod
    def parse(cls, text: str) -> "SchedulerSpec":
        """Parse ``fixed:N=<int>``, ``distance:delta=<float>`` or ``rcs:tau=<float>[,scope=first|all]``."""
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        opts = {k.lower(): v for k, v in _parse_opts(rest).items()}
        try:
            if kind == "fixed":
                _reject_extra(opts, {"n"})
                return cls("fixed", interval=int(opts["n"]))
            if kind == "distance":
                _reject_extra(opts, {"delta"})
                return cls("distance", delta=float(opts["delta"]))
            if kind == "rcs":
                _reject_extra(opts, {"tau", "scope"})
                return cls("rcs", tau=float(opts["tau"]), scope=opts.get("scope", "first"))
        except (KeyError, ValueError) as exc:
            raise InvalidConfig(f"bad scheduler spec {text!r}: {exc}") from None
        raise InvalidConfig(f"unknown scheduler {text!r}")


@dataclass
class SchedulerState:
    warmup_remaining: int
    accumulated_error: float = 0.0
    steps_since_full: int = 0
    post_warmup_steps: int = 0
    full_compute_log: list[int] = field(default_factory=list)

    @classmethod
    def start(cls, order: int) -> "SchedulerState":
        """Fresh state; the first ``order + 1`` steps are forced full computes."""
        return cls(warmup_remaining=order + 1)

    def _record_full(self, t: int) -> None:
        self.accumulated_error = 0.0
        self.steps_since_full = 0
        self.full_compute_log.append(int(t))


@dataclass(frozen=True)
class StepDecision:
    action: Action
    trigger_value: float
    # input-forecast error of the scoped module(s); None during warmup
    eps_in: Optional[float] = None


def predict_input(cache: ModuleCache, target_t: int, m: int) -> np.ndarray:
    """Taylor forecast of the module input from its last ``m + 1`` cached inputs."""
    if len(cache.in_history) == 0:
        raise InsufficientHistory(f"module {cache.module_id} has no cached inputs")
    return newton_predict(cache.in_history.tail(m + 1), target_t)


def input_forecast_error(
    observed_inputs: Sequence[np.ndarray], caches: Sequence[ModuleCache], t: int, m: int
) -> float:
    """Sum over the given modules of the relative L1 input-forecast error."""
    return float(
        sum(rel_l1_error(obs, predict_input(c, t, m)) for obs, c in zip(observed_inputs, caches))
    )


def observe_and_decide(
    state: SchedulerState,
    spec: SchedulerSpec,
    observed_inputs: Sequence[np.ndarray],
    caches: Sequence[ModuleCache],
    t: int,
    m: int,
) -> tuple[StepDecision, SchedulerState]:
    """Decide what to do at step ``t`` and update ``state`` in place.

    ``observed_inputs``/``caches`` hold the first module only, or every module
    when an RCS scheduler uses ``scope="all"``.
    """
    if state.warmup_remaining > 0:
        state.warmup_remaining -= 1
        state._record_full(t)
        return StepDecision(Action.FULL, 0.0), state

    if spec.kind == "rcs" and any(len(c.in_history) < 2 for c in caches):
        raise InsufficientHistory("RCS needs two cached inputs after warmup")
    if spec.kind == "rcs":
        eps_in = input_forecast_error(observed_inputs, caches, t, m)
    else:
        # logged for analysis only
        try:
            eps_in = input_forecast_error(observed_inputs[:1], caches[:1], t, m)
        except ZeroReference:
            eps_in = None

    if spec.kind == "fixed":
        trigger = float(state.steps_since_full + 1)
        # anchored so the first post-warmup step is a full compute
        full = state.post_warmup_steps % spec.interval == 0
    elif spec.kind == "distance":
        latest = caches[0].in_history.latest[1]
        trigger = rel_l1_error(observed_inputs[0], latest)
        full = trigger > spec.delta
    else:
        state.accumulated_error += eps_in
        trigger = state.accumulated_error
        full = state.accumulated_error > spec.tau

    state.post_warmup_steps += 1
    if full:
        state._record_full(t)
        return StepDecision(Action.FULL, trigger, eps_in), state
    state.steps_since_full += 1
    return StepDecision(Action.PREDICT, trigger, eps_in), state


def nfc(state: SchedulerState, warmup: int = 0) -> int:
    """Number of full computes in a finished run, warmup included."""
    n = len(state.full_compute_log)
    if n < warmup:
        raise ValueError(f"log has {n} full computes but warmup was {warmup}")
    return n


def fixed_interval_nfc(total_steps: int, interval: int, warmup: int) -> int:
    return warmup + math.ceil((total_steps - warmup) / interval)
