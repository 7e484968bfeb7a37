"""Feature vectors, norms, finite differences and polynomial extrapolation.

Features are plain float64 numpy arrays of any shape. Norms are always taken
over the whole tensor, never per token.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientHistory, NonUniformSpacing, ShapeMismatch, ZeroReference


def as_feature(data, shape: Sequence[int] | None = None) -> np.ndarray:
    """Coerce ``data`` to a finite float64 array, optionally reshaped to ``shape``."""
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeMismatch(f"shape extents must be positive, got {shape}")
        if math.prod(shape) != arr.size:
            raise ShapeMismatch(f"{arr.size} elements do not fill shape {shape}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature contains NaN or Inf")
    return arr


def l2_norm(v: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(v))))


def l1_norm(v: np.ndarray) -> float:
    return float(np.sum(np.abs(v)))


def rel_l1_error(actual: np.ndarray, predicted: np.ndarray) -> float:
    """``||actual - predicted||_1 / ||actual||_1``.

    Raises ZeroReference when ``actual`` is identically zero.
    """
    if actual.shape != predicted.shape:
        raise ShapeMismatch(f"{actual.shape} vs {predicted.shape}")
    denom = l1_norm(actual)
    if denom == 0.0:
        raise ZeroReference("relative error against an all-zero reference")
    return l1_norm(actual - predicted) / denom


def normalize_l2(v: np.ndarray) -> np.ndarray:
    """Unit-L2 copy of ``v``; the zero vector maps to itself."""
    n = l2_norm(v)
    if n == 0.0:
        return np.zeros_like(v, dtype=np.float64)
    return v / n


@dataclass
class SampleHistory:
    """The most recent ``capacity`` full-compute samples of one feature stream.

    Points are kept oldest first; timesteps strictly decrease along the list
    because denoising runs from ``T`` down to 1.
    """

    capacity: int
    points: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")

    def __len__(self) -> int:
        return len(self.points)

    def push(self, t: int, value: np.ndarray) -> None:
        if self.points:
            last_t, last_v = self.points[-1]
            if t >= last_t:
                raise ValueError(f"timestep {t} does not follow {last_t}")
            if value.shape != last_v.shape:
                raise ShapeMismatch(f"{value.shape} vs cached {last_v.shape}")
        self.points.append((int(t), value))
        if len(self.points) > self.capacity:
            del self.points[0]

    @property
    def timesteps(self) -> list[int]:
        return [t for t, _ in self.points]

    @property
    def latest(self) -> tuple[int, np.ndarray]:
        if not self.points:
            raise InsufficientHistory("history is empty")
        return self.points[-1]

    def tail(self, n: int) -> "SampleHistory":
        """A new history holding only the ``n`` most recent points."""
        return SampleHistory(max(n, 1), list(self.points[-n:]) if n > 0 else [])


def _uniform_stride(ts: Sequence[int]) -> int:
    gaps = {ts[i] - ts[i + 1] for i in range(len(ts) - 1)}
    if len(gaps) != 1:
        raise NonUniformSpacing(f"timesteps {list(ts)} are not evenly spaced")
    return gaps.pop()


def finite_difference(history: SampleHistory, order: int) -> np.ndarray:
    """Order-``order`` backward difference at the latest sample, stride = spacing."""
    if order < 1:
        raise ValueError("order must be >= 1")
    if len(history) < order + 1:
        raise InsufficientHistory(f"order {order} needs {order + 1} points, have {len(history)}")
    pts = history.points[-(order + 1):]
    _uniform_stride([t for t, _ in pts])
    vals = np.stack([v for _, v in pts])
    return np.diff(vals, n=order, axis=0)[-1]


def newton_predict(history: SampleHistory, target_t: float) -> np.ndarray:
    """Evaluate the interpolating polynomial through every stored point at ``target_t``.

    Works element-wise on whole feature tensors, with arbitrary (possibly
    non-uniform) timestep spacing.
    """
    if len(history) == 0:
        raise InsufficientHistory("history is empty")
    ts = np.array(history.timesteps, dtype=np.float64)
    coef = [v.astype(np.float64, copy=True) for _, v in history.points]
    n = len(coef)
    # in-place divided-difference table; coef[j] ends up as f[t_0..t_j]
    for j in range(1, n):
        for i in range(n - 1, j - 1, -1):
            coef[i] = (coef[i] - coef[i - 1]) / (ts[i] - ts[i - j])
    out = coef[n - 1].copy()
    for j in range(n - 2, -1, -1):
        out = coef[j] + (target_t - ts[j]) * out
    return out


def taylor_series_predict(history: SampleHistory, target_t: int, order: int) -> np.ndarray:
    """Truncated Taylor expansion around the latest sample using uniform-stride differences.

    ``O(t) + sum_i k^i / i! * Delta_N^i O(t) / N^i`` with ``k = t - target_t``.
    Uses at most ``min(order, len(history) - 1)`` terms. For order 1 this is
    the same polynomial as :func:`newton_predict`; for higher orders the two
    differ because the expansion is not an interpolant.
    """
    t, base = history.latest
    degree = min(order, len(history) - 1)
    out = base.copy()
    if degree == 0:
        return out
    stride = _uniform_stride(history.timesteps[-(degree + 1):])
    k = t - target_t
    for i in range(1, degree + 1):
        diff = finite_difference(history, i)
        out = out + (k ** i / math.factorial(i)) * diff / stride ** i
    return out
