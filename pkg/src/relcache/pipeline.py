"""A small deterministic diffusion-transformer stand-in for caching experiments.

Each block holds two cacheable modules, attention then MLP. A module's input
is produced by a cheap pre-op (LayerNorm plus timestep-conditioned scale and
shift) and its output by the expensive op; the caller adds the residual.
Noise is predicted by a fixed linear projection of the final hidden state and
fed to a DDIM update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .diffusion import AlphaSchedule, ddim_step
from .errors import InvalidConfig, ShapeMismatch
from .features import rel_l1_error
from .metrics import MetricsLog, StepMetrics
from .policies import ModuleCache, PolicySpec, predict_output
from .scheduler import Action, SchedulerSpec, SchedulerState, observe_and_decide
from .trace import Trace

LN_EPS = 1e-5
MAX_DEPTH, MAX_WIDTH, MAX_SEQ, MAX_T = 16, 512, 256, 1000


@dataclass(frozen=True)
class PipelineConfig:
    depth: int = 3
    width: int = 64
    seq_len: int = 8
    T: int = 50
    seed: int = 0
    alpha_schedule: str = "linear"

    def __post_init__(self):
        if not 1 <= self.depth <= MAX_DEPTH:
            raise InvalidConfig(f"depth must be in [1, {MAX_DEPTH}]")
        if not 2 <= self.width <= MAX_WIDTH:
            raise InvalidConfig(f"width must be in [2, {MAX_WIDTH}]")
        if not 1 <= self.seq_len <= MAX_SEQ:
            raise InvalidConfig(f"seq_len must be in [1, {MAX_SEQ}]")
        if not 4 <= self.T <= MAX_T:
            raise InvalidConfig(f"T must be in [4, {MAX_T}]")
        if self.alpha_schedule not in ("linear", "cosine"):
            raise InvalidConfig(f"alpha_schedule must be linear or cosine")

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        # config files lower-case their keys, so match names case-insensitively
        known = {f.name.lower(): f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            name = known.get(key.lower())
            if name is None:
                raise InvalidConfig(f"unknown pipeline key {key!r}")
            kwargs[name] = raw if name == "alpha_schedule" else int(raw)
        return cls(**kwargs)


@dataclass
class ModuleParams:
    """Parameters of one cacheable module (its pre-op and its expensive op)."""

    kind: str  # "attention" or "mlp"
    norm_scale: np.ndarray
    norm_shift: np.ndarray
    mod_scale_amp: np.ndarray
    mod_shift_amp: np.ndarray
    mod_freq: np.ndarray
    mod_phase: np.ndarray
    weights: dict[str, np.ndarray]

    def modulation(self, t: int, T: int) -> tuple[np.ndarray, np.ndarray]:
        angle = 2.0 * math.pi * self.mod_freq * (t / T) + self.mod_phase
        return 1.0 + self.mod_scale_amp * np.sin(angle), self.mod_shift_amp * np.cos(angle)


def _module_params(rng: np.random.Generator, kind: str, width: int) -> ModuleParams:
    w = width
    common = dict(
        norm_scale=1.0 + 0.1 * rng.standard_normal(w),
        norm_shift=0.1 * rng.standard_normal(w),
        mod_scale_amp=0.3 * rng.uniform(0.0, 1.0, w),
        mod_shift_amp=0.3 * rng.uniform(0.0, 1.0, w),
        mod_freq=rng.uniform(0.2, 1.0, w),
        mod_phase=rng.uniform(0.0, 2.0 * math.pi, w),
    )
    if kind == "attention":
        weights = {
            "wq": rng.standard_normal((w, w)) / math.sqrt(w),
            "wk": rng.standard_normal((w, w)) / math.sqrt(w),
            "wv": 0.5 * rng.standard_normal((w, w)) / math.sqrt(w),
        }
    else:
        hidden = 2 * w
        weights = {
            "w1": rng.standard_normal((w, hidden)) / math.sqrt(w),
            "b1": 0.1 * rng.standard_normal(hidden),
            "w2": 0.5 * rng.standard_normal((hidden, w)) / math.sqrt(hidden),
            "b2": 0.1 * rng.standard_normal(w),
        }
    return ModuleParams(kind=kind, weights=weights, **common)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def block_pre_op(hidden: np.ndarray, t: int, params: ModuleParams, T: int) -> np.ndarray:
    """LayerNorm over channels, per-channel affine, then timestep scale/shift."""
    mu = hidden.mean(axis=-1, keepdims=True)
    var = hidden.var(axis=-1, keepdims=True)
    normed = (hidden - mu) / np.sqrt(var + LN_EPS)
    scale, shift = params.modulation(t, T)
    return (normed * params.norm_scale + params.norm_shift) * scale + shift


def block_expensive_op(
    inp: np.ndarray,
    params: ModuleParams,
    activation: Callable[[np.ndarray], np.ndarray] = gelu,
) -> np.ndarray:
    """Single-head softmax attention over tokens, or a two-layer MLP."""
    w = params.weights
    if params.kind == "attention":
        if inp.shape[-1] != w["wq"].shape[0]:
            raise ShapeMismatch(f"input width {inp.shape[-1]} vs {w['wq'].shape[0]}")
        q, k, v = inp @ w["wq"], inp @ w["wk"], inp @ w["wv"]
        scores = q @ k.T / math.sqrt(q.shape[-1])
        scores = scores - scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        return attn @ v
    if inp.shape[-1] != w["w1"].shape[0]:
        raise ShapeMismatch(f"input width {inp.shape[-1]} vs {w['w1'].shape[0]}")
    return activation(inp @ w["w1"] + w["b1"]) @ w["w2"] + w["b2"]


@dataclass
class Pipeline:
    config: PipelineConfig
    modules: list[ModuleParams]
    pos_embed: np.ndarray
    head: np.ndarray
    schedule: AlphaSchedule

    @property
    def n_modules(self) -> int:
        return len(self.modules)

    @property
    def feature_shape(self) -> tuple[int, int]:
        return (self.config.seq_len, self.config.width)

    def embed(self, x: np.ndarray) -> np.ndarray:
        return x + self.pos_embed

    def pre_op(self, i: int, hidden: np.ndarray, t: int) -> np.ndarray:
        return block_pre_op(hidden, t, self.modules[i], self.config.T)

    def expensive_op(self, i: int, inp: np.ndarray) -> np.ndarray:
        return block_expensive_op(inp, self.modules[i])

    def predict_noise(self, hidden: np.ndarray) -> np.ndarray:
        return hidden @ self.head

    def reference_noise(self, x: np.ndarray, t: int) -> np.ndarray:
        """Noise prediction with every module computed (no caching)."""
        h = self.embed(x)
        for i in range(self.n_modules):
            h = h + self.expensive_op(i, self.pre_op(i, h, t))
        return self.predict_noise(h)

    def initial_latent(self, seed: int) -> np.ndarray:
        return np.random.default_rng(seed).standard_normal(self.feature_shape)


def build_pipeline(config: PipelineConfig) -> Pipeline:
    """Deterministic in ``config``: identical configs give identical parameters."""
    rng = np.random.default_rng(config.seed)
    w = config.width
    modules = []
    for _ in range(config.depth):
        modules.append(_module_params(rng, "attention", w))
        modules.append(_module_params(rng, "mlp", w))
    pos_embed = 0.1 * rng.standard_normal((config.seq_len, w))
    head = np.eye(w) + 0.1 * rng.standard_normal((w, w)) / math.sqrt(w)
    schedule = AlphaSchedule.build(config.alpha_schedule, config.T)
    return Pipeline(config, modules, pos_embed, head, schedule)


@dataclass
class RunResult:
    latent: np.ndarray
    metrics: MetricsLog
    state: Optional[SchedulerState]
    trace: Optional[Trace] = None


def run_reference(pipeline: Pipeline, seed: int) -> np.ndarray:
    """Sampling with every module computed at every step."""
    x = pipeline.initial_latent(seed)
    for t in range(pipeline.config.T, 0, -1):
        x = ddim_step(x, pipeline.reference_noise(x, t), t, pipeline.schedule)
    return x


def run_sampling(
    pipeline: Pipeline,
    policy: PolicySpec,
    scheduler: SchedulerSpec,
    seed: int,
    record_trace: bool = False,
    ghost_reference: bool = False,
) -> RunResult:
    """Cached DDIM sampling from ``t = T`` down to 1.

    With ``ghost_reference`` every predicted module is also computed (off the
    sampling path) so per-module output errors can be logged. Recording a
    trace implies the same extra computation: trace outputs are always the
    full-compute output for the recorded input.
    """
    cfg = pipeline.config
    m = policy.history_order
    caches = [ModuleCache.for_order(i, m) for i in range(pipeline.n_modules)]
    state = SchedulerState.start(m)
    log = MetricsLog(policy.label, scheduler.label, warmup=m + 1)
    trace = Trace(pipeline.n_modules, pipeline.feature_shape, list(range(cfg.T, 0, -1))) if record_trace else None
    want_truth = ghost_reference or record_trace

    x = pipeline.initial_latent(seed)
    for t in range(cfg.T, 0, -1):
        h0 = pipeline.embed(x)
        first_input = pipeline.pre_op(0, h0, t)
        if scheduler.kind == "rcs" and scheduler.scope == "all" and state.warmup_remaining == 0:
            observed, scoped = _predicted_pass(pipeline, caches, policy, h0, t)[0], caches
        else:
            observed, scoped = [first_input], caches[:1]
        decision, state = observe_and_decide(state, scheduler, observed, scoped, t, m)

        h = h0
        eps_out: Optional[list[float]] = [] if ghost_reference else None
        for i in range(pipeline.n_modules):
            inp = first_input if i == 0 else pipeline.pre_op(i, h, t)
            if decision.action is Action.FULL:
                out = pipeline.expensive_op(i, inp)
                caches[i].on_full_compute(t, inp, out)
                truth = out
                err = 0.0
            else:
                out = predict_output(caches[i], policy, inp, t, cfg.T)
                truth = pipeline.expensive_op(i, inp) if want_truth else None
                err = rel_l1_error(truth, out) if ghost_reference else None
            if eps_out is not None:
                eps_out.append(err)
            if trace is not None:
                trace.add(t, i, "input", inp)
                trace.add(t, i, "output", truth)
            h = h + out

        log.steps.append(
            StepMetrics(
                t=t,
                decision=decision.action.value,
                trigger_value=decision.trigger_value,
                eps_in=decision.eps_in,
                accumulated_error=state.accumulated_error if decision.action is Action.PREDICT else 0.0,
                eps_out=eps_out,
            )
        )
        x = ddim_step(x, pipeline.predict_noise(h), t, pipeline.schedule)

    log.full_compute_log = list(state.full_compute_log)
    if trace is not None:
        trace.full_compute_log = list(state.full_compute_log)
    return RunResult(x, log, state, trace)


def _predicted_pass(pipeline, caches, policy, h0, t):
    """Inputs of every module along a fully predicted step (used for all-module RCS)."""
    h, inputs = h0, []
    for i in range(pipeline.n_modules):
        inp = pipeline.pre_op(i, h, t)
        inputs.append(inp)
        h = h + predict_output(caches[i], policy, inp, t, pipeline.config.T)
    return inputs, h


def run_no_cache(pipeline: Pipeline, seed: int, record_trace: bool = False) -> RunResult:
    """Reference run through the cached loop with a full compute at every step."""
    return run_sampling(
        pipeline, PolicySpec("reuse"), SchedulerSpec("fixed", interval=1), seed, record_trace=record_trace
    )
