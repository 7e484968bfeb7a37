"""Output-prediction policies and the per-module cache they share.

Four policies are supported: direct reuse of the last cached output, linear
extrapolation with a weight schedule, Taylor-style polynomial forecasting and
relational feature estimation (RFE), which keeps the forecast direction but
takes its magnitude from the change of the module's (cheap) input.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InsufficientHistory, InvalidConfig, ShapeMismatch
from .features import (
    SampleHistory,
    finite_difference,
    l2_norm,
    newton_predict,
    normalize_l2,
    taylor_series_predict,
)

KINDS = ("reuse", "linear", "taylor", "rfe")


@dataclass(frozen=True)
class PolicySpec:
    """Which predictor to use.

    ``order`` is the Taylor order m (also sets how many samples are cached).
    ``weight`` is the constant linear-extrapolation weight, or ``None`` for the
    ramp ``w(t) = t / T``. ``form`` selects the polynomial used by taylor/rfe:
    ``"newton"`` interpolates the cached points exactly (handles uneven gaps),
    ``"series"`` is the truncated expansion with k^i/i! coefficients.
    """

    kind: str
    order: int = 1
    weight: Optional[float] = 1.0
    form: str = "newton"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidConfig(f"unknown policy kind {self.kind!r}")
        if self.order < 1:
            raise InvalidConfig("order m must be >= 1")
        if self.weight is not None and self.weight < 0:
            raise InvalidConfig("linear weight must be non-negative")
        if self.form not in ("newton", "series"):
            raise InvalidConfig(f"unknown polynomial form {self.form!r}")

    @property
    def history_order(self) -> int:
        """Polynomial order the cache has to support (reuse/linear keep two points)."""
        return self.order if self.kind in ("taylor", "rfe") else 1

    @property
    def label(self) -> str:
        if self.kind == "reuse":
            return "reuse"
        if self.kind == "linear":
            return "linear:w=ramp" if self.weight is None else f"linear:w={self.weight:g}"
        suffix = ",form=series" if self.form == "series" else ""
        return f"{self.kind}:m={self.order}{suffix}"

    @classmethod
    def parse(cls, text: str) -> "PolicySpec":
        """Parse ``reuse``, ``linear:w=<c>|ramp``, ``taylor:m=<int>`` or ``rfe:m=<int>``."""
        kind, _, rest = text.strip().partition(":")
        kind = kind.strip().lower()
        opts = _parse_opts(rest)
        try:
            if kind == "reuse":
                _reject_extra(opts, set())
                return cls("reuse")
            if kind == "linear":
                _reject_extra(opts, {"w"})
                w = opts.get("w", "1")
                return cls("linear", weight=None if w == "ramp" else float(w))
            if kind in ("taylor", "rfe"):
                _reject_extra(opts, {"m", "form"})
                return cls(kind, order=int(opts.get("m", "1")), form=opts.get("form", "newton"))
        except ValueError as exc:
            raise InvalidConfig(f"bad policy spec {text!r}: {exc}") from None
        raise InvalidConfig(f"unknown policy {text!r}")


def _parse_opts(rest: str) -> dict[str, str]:
    opts = {}
    for part in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = part.partition("=")
        if not eq:
            raise InvalidConfig(f"expected key=value, got {part!r}")
        opts[key.strip().lower()] = value.strip()
    return opts


def _reject_extra(opts: dict, allowed: set) -> None:
    extra = set(opts) - allowed
    if extra:
        raise InvalidConfig(f"unexpected options {sorted(extra)}")


def compute_s_ratio(in_diff: np.ndarray, out_diff: np.ndarray) -> Optional[float]:
    """Ratio of output-change to input-change L2 norms; ``None`` if the input did not move."""
    denom = l2_norm(in_diff)
    if denom == 0.0:
        return None
    return l2_norm(out_diff) / denom


@dataclass
class ModuleCache:
    """Cached full-compute inputs/outputs of one expensive module."""

    module_id: int
    capacity: int = 2
    out_history: SampleHistory = field(init=False)
    in_history: SampleHistory = field(init=False)
    s_ratio: Optional[float] = None
    last_full_t: Optional[int] = None
    last_interval: Optional[int] = None

    def __post_init__(self):
        self.out_history = SampleHistory(self.capacity)
        self.in_history = SampleHistory(self.capacity)

    @classmethod
    def for_order(cls, module_id: int, order: int) -> "ModuleCache":
        return cls(module_id, capacity=order + 1)

    def on_full_compute(self, t: int, inp: np.ndarray, out: np.ndarray) -> "ModuleCache":
        if self.last_full_t is not None:
            if t >= self.last_full_t:
                raise ValueError(f"full compute at t={t} after t={self.last_full_t}")
            _, prev_in = self.in_history.latest
            _, prev_out = self.out_history.latest
            if inp.shape != prev_in.shape or out.shape != prev_out.shape:
                raise ShapeMismatch("feature shape changed between full computes")
        self.in_history.push(t, inp)
        self.out_history.push(t, out)
        self.last_full_t = int(t)
        if len(self.in_history) >= 2:
            (t_prev, i_prev), (_, i_now) = self.in_history.points[-2:]
            o_prev = self.out_history.points[-2][1]
            self.last_interval = t_prev - t
            self.s_ratio = compute_s_ratio(i_now - i_prev, out - o_prev)
        else:
            self.last_interval = None
            self.s_ratio = None
        return self


def predict_direct_reuse(cache: ModuleCache) -> np.ndarray:
    return cache.out_history.latest[1]


def linear_weight(spec: PolicySpec, t_now: int, total_steps: Optional[int]) -> float:
    if spec.weight is not None:
        return spec.weight
    if not total_steps:
        raise InvalidConfig("ramp weight needs the total step count")
    return t_now / total_steps


def predict_linear_w(
    cache: ModuleCache,
    k: int,
    t_now: int,
    spec: PolicySpec,
    total_steps: Optional[int] = None,
) -> np.ndarray:
    """``O(t) + (k/N) * w(t_now) * Delta_N O(t)`` from the two latest cached outputs."""
    hist = cache.out_history
    if len(hist) < 2:
        raise InsufficientHistory("linear extrapolation needs two cached outputs")
    (t_prev, _), (t_last, o_last) = hist.points[-2:]
    stride = t_prev - t_last
    delta = finite_difference(hist.tail(2), 1)
    w = linear_weight(spec, t_now, total_steps)
    return o_last + (k / stride) * w * delta


def _polynomial(history: SampleHistory, target_t: int, order: int, form: str) -> np.ndarray:
    used = history.tail(order + 1)
    if form == "series":
        return taylor_series_predict(used, target_t, order)
    return newton_predict(used, target_t)


def predict_taylor(cache: ModuleCache, target_t: int, spec: PolicySpec) -> np.ndarray:
    if len(cache.out_history) == 0:
        raise InsufficientHistory("no cached outputs")
    return _polynomial(cache.out_history, target_t, spec.order, spec.form)


def predict_rfe(
    cache: ModuleCache, current_input: np.ndarray, target_t: int, spec: PolicySpec
) -> np.ndarray:
    """Taylor direction, magnitude ``s_N * ||current_input - I(t)||_2``.

    Falls back to the plain Taylor forecast when the ratio is undefined or the
    forecast does not move.
    """
    forecast = predict_taylor(cache, target_t, spec)
    _, i_last = cache.in_history.latest
    if current_input.shape != i_last.shape:
        raise ShapeMismatch(f"{current_input.shape} vs cached input {i_last.shape}")
    if cache.s_ratio is None:
        return forecast
    _, o_last = cache.out_history.latest
    delta = forecast - o_last
    if l2_norm(delta) == 0.0:
        return forecast
    magnitude = cache.s_ratio * l2_norm(current_input - i_last)
    return o_last + magnitude * normalize_l2(delta)


def predict_output(
    cache: ModuleCache,
    spec: PolicySpec,
    current_input: np.ndarray,
    target_t: int,
    total_steps: Optional[int] = None,
) -> np.ndarray:
    """Dispatch to the policy named by ``spec``."""
    if spec.kind == "reuse":
        return predict_direct_reuse(cache)
    if spec.kind == "linear":
        k = cache.last_full_t - target_t
        return predict_linear_w(cache, k, target_t, spec, total_steps)
    if spec.kind == "taylor":
        return predict_taylor(cache, target_t, spec)
    return predict_rfe(cache, current_input, target_t, spec)
