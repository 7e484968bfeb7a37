"""Offline diagnostics over recorded traces, and policy replay against them."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData, SingularFit, UndefinedDirection, UndefinedRatio
from .features import l2_norm, normalize_l2, rel_l1_error
from .metrics import MetricsLog, StepMetrics
from .policies import ModuleCache, PolicySpec, compute_s_ratio, predict_output
from .scheduler import Action, SchedulerSpec, SchedulerState, observe_and_decide
from .trace import Trace

RIDGE = 1e-8
# spread below this fraction of the largest value counts as an all-equal series
FLAT_TOL = 1e-9


def minmax_normalize(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= FLAT_TOL * max(abs(hi), abs(lo)):
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def consecutive_l2_series(trace: Trace, module: int, stream: str, normalize: bool = True) -> np.ndarray:
    """``||F(t-1) - F(t)||_2`` along the trace, min-max normalised to [0, 1]."""
    if len(trace.timesteps) < 2:
        raise InsufficientData("need at least two timesteps")
    series = trace.series(module, stream)
    raw = np.array([l2_norm(series[j + 1] - series[j]) for j in range(len(series) - 1)])
    return minmax_normalize(raw) if normalize else raw


def s_ratio_values(trace: Trace, module: int, t: int, k_max: int) -> np.ndarray:
    """``s_k(t-k)`` for ``k = 1..k_max`` anchored at the sample at ``t``."""
    idx = trace.timesteps.index(t)
    if idx + k_max >= len(trace.timesteps):
        raise InsufficientData(f"trace does not reach {k_max} steps past t={t}")
    i_now, o_now = trace.get(t, module, "input"), trace.get(t, module, "output")
    out = []
    for k in range(1, k_max + 1):
        tk = trace.timesteps[idx + k]
        s = compute_s_ratio(trace.get(tk, module, "input") - i_now, trace.get(tk, module, "output") - o_now)
        if s is None:
            raise UndefinedRatio(f"input did not change between t={t} and t={tk}")
        out.append(s)
    return np.array(out)


def s_ratio_rsd(trace: Trace, module: int, t: int, k_max: int = 9) -> float:
    """Relative standard deviation (population std / mean) of ``s_k`` over k."""
    s = s_ratio_values(trace, module, t, k_max)
    mean = float(s.mean())
    if mean == 0.0:
        raise UndefinedRatio("output did not change; RSD undefined")
    return float(s.std()) / mean


def s_ratio_rsd_series(trace: Trace, module: int, k_max: int = 9) -> np.ndarray:
    """RSD at every anchor that has ``k_max`` later samples."""
    anchors = trace.timesteps[: len(trace.timesteps) - k_max]
    if not anchors:
        raise InsufficientData(f"trace shorter than {k_max + 1} steps")
    return np.array([s_ratio_rsd(trace, module, t, k_max) for t in anchors])


def _scalar_fit_r2(z: np.ndarray, Y: np.ndarray) -> float:
    """R^2 of the least-squares fit ``Y ~ a + z b`` for a scalar regressor z."""
    zc = z - z.mean()
    Yc = Y - Y.mean(axis=0)
    zz = float(zc @ zc)
    ss_tot = float(np.sum(Yc * Yc))
    if zz <= 0.0:
        if ss_tot == 0.0:
            return 1.0
        raise SingularFit("regressor is constant over the window but the output moves")
    coef = (zc @ Yc) / (zz * (1.0 + RIDGE))
    resid = Yc - np.outer(zc, coef)
    if ss_tot == 0.0:
        return 1.0
    return 1.0 - float(np.sum(resid * resid)) / ss_tot


def principal_coordinate(X: np.ndarray) -> np.ndarray:
    """Projection of centred rows of X onto their leading principal direction."""
    Xc = X - X.mean(axis=0)
    if not np.any(Xc):
        return np.zeros(X.shape[0])
    _, _, vt = np.linalg.svd(Xc, full_matrices=False)
    return Xc @ vt[0]


def linearity_r2(trace: Trace, module: int, window: int = 5, regressor: str = "input") -> float:
    """Average R^2 of per-window linear fits of the output features.

    ``regressor="input"`` fits the outputs against the input's coordinate along
    its dominant direction of change in the window; ``"timestep"`` fits them
    against t. Windows are ``window`` consecutive samples, slid by one step.
    """
    if window < 3:
        raise ValueError("window must be >= 3")
    n = len(trace.timesteps)
    if n < window:
        raise InsufficientData(f"trace has {n} steps, window is {window}")
    X = trace.series(module, "input").reshape(n, -1)
    Y = trace.series(module, "output").reshape(n, -1)
    ts = np.array(trace.timesteps, dtype=np.float64)
    scores = []
    for j in range(n - window + 1):
        sl = slice(j, j + window)
        z = principal_coordinate(X[sl]) if regressor == "input" else ts[sl]
        scores.append(_scalar_fit_r2(z, Y[sl]))
    return float(np.mean(scores))


def _mean_pairwise_cosine(vectors: Sequence[np.ndarray]) -> float:
    units = []
    for v in vectors:
        if l2_norm(v) == 0.0:
            raise UndefinedDirection("zero-norm feature difference")
        units.append(normalize_l2(v).ravel())
    sims = [float(a @ b) for a, b in itertools.combinations(units, 2)]
    return float(np.mean(sims))


def directional_consistency(trace: Trace, module: int, stream: str, k_max: int = 4) -> float:
    """Mean pairwise cosine of ``F(t-k) - F(t)`` for ``k = 1..k_max``, averaged over anchors t."""
    if k_max < 2:
        raise ValueError("need k_max >= 2 for pairwise comparisons")
    n = len(trace.timesteps)
    if n <= k_max:
        raise InsufficientData(f"trace has {n} steps, need more than {k_max}")
    series = trace.series(module, stream)
    scores = [
        _mean_pairwise_cosine([series[a + k] - series[a] for k in range(1, k_max + 1)])
        for a in range(n - k_max)
    ]
    return float(np.mean(scores))


def interval_profile(full_compute_logs: Sequence[Sequence[int]]) -> list[float]:
    """Mean gap between the i-th and (i+1)-th full compute, across runs.

    Runs with fewer full computes simply do not contribute to later positions.
    """
    gaps = [[a - b for a, b in zip(log, log[1:])] for log in full_compute_logs]
    width = max((len(g) for g in gaps), default=0)
    if width == 0:
        raise InsufficientData("no run has two full computes")
    return [float(np.mean([g[i] for g in gaps if len(g) > i])) for i in range(width)]


@dataclass
class MetricsReport:
    log: Optional[MetricsLog] = None
    rsd: dict[int, float] = field(default_factory=dict)
    r2_input: dict[int, float] = field(default_factory=dict)
    r2_timestep: dict[int, float] = field(default_factory=dict)
    consistency: dict[str, float] = field(default_factory=dict)
    l2_series: dict[str, list[float]] = field(default_factory=dict)
    intervals: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        out = {
            "rsd": {str(k): v for k, v in self.rsd.items()},
            "r2_input": {str(k): v for k, v in self.r2_input.items()},
            "r2_timestep": {str(k): v for k, v in self.r2_timestep.items()},
            "consistency": dict(self.consistency),
            "interval_profile": list(self.intervals),
        }
        if self.log is not None:
            out.update(self.log.summary())
        return out


def replay_policy(
    trace: Trace,
    policy: PolicySpec,
    scheduler: SchedulerSpec,
    total_steps: Optional[int] = None,
) -> MetricsReport:
    """Re-run the caching decisions of ``policy``/``scheduler`` against recorded ground truth.

    The trace supplies every module's input at every step and the output a
    full compute would have produced there.
    """
    if total_steps is None:
        total_steps = trace.timesteps[0]
    m = policy.history_order
    n = trace.n_modules
    caches = [ModuleCache.for_order(i, m) for i in range(n)]
    state = SchedulerState.start(m)
    log = MetricsLog(policy.label, scheduler.label, warmup=m + 1)
    all_scope = scheduler.kind == "rcs" and scheduler.scope == "all"
    for t in trace.timesteps:
        inputs = [trace.get(t, i, "input") for i in range(n)]
        outputs = [trace.get(t, i, "output") for i in range(n)]
        scoped = slice(None) if all_scope and state.warmup_remaining == 0 else slice(0, 1)
        decision, state = observe_and_decide(state, scheduler, inputs[scoped], caches[scoped], t, m)
        if decision.action is Action.FULL:
            for i in range(n):
                caches[i].on_full_compute(t, inputs[i], outputs[i])
            errs = [0.0] * n
            acc = 0.0
        else:
            errs = [
                rel_l1_error(outputs[i], predict_output(caches[i], policy, inputs[i], t, total_steps))
                for i in range(n)
            ]
            acc = state.accumulated_error
        log.steps.append(StepMetrics(t, decision.action.value, decision.trigger_value, decision.eps_in, acc, errs))
    log.full_compute_log = list(state.full_compute_log)
    return MetricsReport(log=log, intervals=[float(v) for v in log.intervals])


def analyze_trace(trace: Trace, k_max_rsd: int = 9, window: int = 5, k_max_dir: int = 4) -> MetricsReport:
    """Every diagnostic the trace supports; skipped entries are left out of the tables."""
    report = MetricsReport()
    for mod in range(trace.n_modules):
        try:
            report.rsd[mod] = float(np.mean(s_ratio_rsd_series(trace, mod, k_max_rsd)))
        except (InsufficientData, UndefinedRatio):
            pass
        try:
            report.r2_input[mod] = linearity_r2(trace, mod, window, "input")
            report.r2_timestep[mod] = linearity_r2(trace, mod, window, "timestep")
        except (InsufficientData, SingularFit):
            pass
        for stream in ("input", "output"):
            key = f"{mod}:{stream}"
            try:
                report.consistency[key] = directional_consistency(trace, mod, stream, k_max_dir)
            except (InsufficientData, UndefinedDirection):
                pass
            report.l2_series[key] = consecutive_l2_series(trace, mod, stream).tolist()
    if trace.full_compute_log and len(trace.full_compute_log) > 1:
        report.intervals = interval_profile([trace.full_compute_log])
    return report
