"""Synthetic single-module input/output trajectories with known structure.

Kinds:

``polynomial``
    every input and output element is a polynomial of degree ``degree`` in t.
``affine_constant``
    ``I(t) = I0 + r(t) u`` with a fixed unit direction ``u`` and a monotone but
    irregularly paced magnitude ``r(t)``; ``O = A I + b``.
``affine_drifting``
    as above but ``u`` rotates in a plane as t decreases.
``irregular_magnitude``
    the constant-direction input pushed through ``tanh(A I + b)``.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .errors import InvalidConfig
from .trace import Trace

KINDS = ("polynomial", "affine_constant", "affine_drifting", "irregular_magnitude")


def magnitude_profile(rng: np.random.Generator, T: int, step_scale: float, jitter: float) -> np.ndarray:
    """Cumulative distance travelled, indexed by step (index 0 is t = T).

    Increments are positive, modulated by a slow envelope and jittered per
    step, so the pace is irregular but never reverses.
    """
    n = T
    phase = rng.uniform(0.0, 2.0 * math.pi)
    envelope = 1.0 + 0.6 * np.sin(2.0 * math.pi * 1.5 * np.arange(n) / n + phase)
    incr = step_scale * envelope * rng.uniform(1.0 - jitter, 1.0 + jitter, n)
    incr[0] = 0.0
    return np.cumsum(incr)


def synthetic_trajectory(
    kind: str,
    T: int,
    dim: int,
    seed: int,
    *,
    degree: int = 1,
    A: Optional[np.ndarray] = None,
    b: Optional[np.ndarray] = None,
    step_scale: float = 0.08,
    jitter: float = 0.9,
    drift_rate: float = 0.15,
) -> Trace:
    """Deterministic trace over timesteps ``T..1`` for one module with ``dim`` features."""
    if kind not in KINDS:
        raise InvalidConfig(f"unknown trajectory kind {kind!r}; expected one of {KINDS}")
    if T < 4:
        raise InvalidConfig("T must be >= 4")
    if dim < 2:
        raise InvalidConfig("dim must be >= 2")
    rng = np.random.default_rng(seed)
    timesteps = list(range(T, 0, -1))
    ts = np.array(timesteps, dtype=np.float64)

    if kind == "polynomial":
        if degree < 0:
            raise InvalidConfig("degree must be non-negative")
        x = ts / T
        powers = np.stack([x**j for j in range(degree + 1)], axis=1)  # (T, degree+1)
        c_in = rng.standard_normal((degree + 1, dim))
        c_out = rng.standard_normal((degree + 1, dim))
        c_in[0] += 2.0
        c_out[0] += 2.0
        inputs, outputs = powers @ c_in, powers @ c_out
    else:
        if A is None:
            A = rng.standard_normal((dim, dim)) / math.sqrt(dim)
        if b is None:
            b = 0.5 * rng.standard_normal(dim)
        A, b = np.asarray(A, dtype=np.float64), np.asarray(b, dtype=np.float64)
        if A.shape != (dim, dim) or b.shape != (dim,):
            raise InvalidConfig("A must be (dim, dim) and b (dim,)")
        i0 = 1.0 + rng.standard_normal(dim)
        u1 = rng.standard_normal(dim)
        u1 /= np.linalg.norm(u1)
        r = magnitude_profile(rng, T, step_scale, jitter)
        if kind == "affine_drifting":
            u2 = rng.standard_normal(dim)
            u2 -= (u2 @ u1) * u1
            u2 /= np.linalg.norm(u2)
            theta = drift_rate * np.arange(T)
            dirs = np.cos(theta)[:, None] * u1 + np.sin(theta)[:, None] * u2
        else:
            dirs = np.broadcast_to(u1, (T, dim))
        inputs = i0 + r[:, None] * dirs
        pre = inputs @ A.T + b
        outputs = np.tanh(pre) if kind == "irregular_magnitude" else pre

    trace = Trace(1, (dim,), timesteps)
    for j, t in enumerate(timesteps):
        trace.add(t, 0, "input", inputs[j].copy())
        trace.add(t, 0, "output", outputs[j].copy())
    return trace
