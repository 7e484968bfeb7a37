"""Noise schedules, forward noising and the deterministic DDIM update."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, ShapeMismatch


@dataclass(frozen=True)
class AlphaSchedule:
    """Cumulative signal rates ``alphas[t]`` for ``t = 0..T`` (``alphas[0] == 1``)."""

    alphas: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=np.float64)
        if a.ndim != 1 or a.size < 2:
            raise InvalidConfig("schedule needs T+1 >= 2 values")
        if np.any(a <= 0) or np.any(a > 1):
            raise InvalidConfig("alphas must lie in (0, 1]")
        if np.any(np.diff(a) > 0) or not a[-1] < a[0]:
            raise InvalidConfig("alphas must decrease from t=0 to t=T")
        object.__setattr__(self, "alphas", a)

    @property
    def T(self) -> int:
        return self.alphas.size - 1

    def __getitem__(self, t: int) -> float:
        return float(self.alphas[t])

    @classmethod
    def linear(cls, T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> "AlphaSchedule":
        # betas rescaled from a 1000-step reference so short schedules still reach high noise
        scale = 1000.0 / T
        betas = np.linspace(beta_start * scale, beta_end * scale, T)
        betas = np.clip(betas, 0.0, 0.999)
        return cls(np.concatenate([[1.0], np.cumprod(1.0 - betas)]))

    @classmethod
    def cosine(cls, T: int, s: float = 0.008) -> "AlphaSchedule":
        f = lambda t: math.cos((t / T + s) / (1 + s) * math.pi / 2) ** 2
        alphas = [1.0]
        for t in range(1, T + 1):
            beta = min(1.0 - f(t) / f(t - 1), 0.999)
            alphas.append(alphas[-1] * (1.0 - beta))
        return cls(np.array(alphas))

    @classmethod
    def build(cls, kind: str, T: int) -> "AlphaSchedule":
        if kind == "linear":
            return cls.linear(T)
        if kind == "cosine":
            return cls.cosine(T)
        raise InvalidConfig(f"unknown alpha schedule {kind!r}")


def forward_noise(x0: np.ndarray, t: int, schedule: AlphaSchedule, noise: np.ndarray) -> np.ndarray:
    """``x_t = sqrt(a_t) x0 + sqrt(1 - a_t) noise``."""
    if x0.shape != noise.shape:
        raise ShapeMismatch(f"{x0.shape} vs {noise.shape}")
    a = schedule[t]
    return math.sqrt(a) * x0 + math.sqrt(1.0 - a) * noise


def ddim_step(x_t: np.ndarray, eps_pred: np.ndarray, t: int, schedule: AlphaSchedule) -> np.ndarray:
    """Deterministic DDIM update from ``t`` to ``t - 1``."""
    if x_t.shape != eps_pred.shape:
        raise ShapeMismatch(f"{x_t.shape} vs {eps_pred.shape}")
    if t < 1:
        raise ValueError("ddim_step needs t >= 1")
    a_t, a_prev = schedule[t], schedule[t - 1]
    x0_pred = (x_t - math.sqrt(1.0 - a_t) * eps_pred) / math.sqrt(a_t)
    return math.sqrt(a_prev) * x0_pred + math.sqrt(1.0 - a_prev) * eps_pred
