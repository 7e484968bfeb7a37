"""Per-(timestep, module, stream) feature traces and their JSON-lines file format.

Line 1 is a header object::

    {"type": "header", "version": 1, "n_modules": 4, "shape": [8, 64], "timesteps": [50, ..., 1]}

and every other line one feature record::

    {"type": "feature", "t": 50, "module": 0, "stream": "input", "data": [...]}

Floats are written with ``repr`` precision so a round trip is lossless.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import FormatError, InsufficientData, ShapeMismatch

STREAMS = ("input", "output")
VERSION = 1


@dataclass
class Trace:
    n_modules: int
    shape: tuple[int, ...]
    timesteps: list[int]
    records: dict[tuple[int, int, str], np.ndarray] = field(default_factory=dict)
    # optional: timesteps at which the recording run fully computed
    full_compute_log: Optional[list[int]] = None

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.timesteps = [int(t) for t in self.timesteps]

    def add(self, t: int, module: int, stream: str, data: np.ndarray) -> None:
        if stream not in STREAMS:
            raise ValueError(f"unknown stream {stream!r}")
        if not 0 <= module < self.n_modules:
            raise ValueError(f"module {module} out of range")
        data = np.asarray(data, dtype=np.float64)
        if data.shape != self.shape:
            raise ShapeMismatch(f"record shape {data.shape} != trace shape {self.shape}")
        self.records[(int(t), int(module), stream)] = data

    def get(self, t: int, module: int, stream: str) -> np.ndarray:
        return self.records[(t, module, stream)]

    def series(self, module: int, stream: str) -> np.ndarray:
        """Stack of one stream over all timesteps, first axis = timestep (descending t)."""
        return np.stack([self.records[(t, module, stream)] for t in self.timesteps])

    def missing(self) -> Iterator[tuple[int, int, str]]:
        for t in self.timesteps:
            for m in range(self.n_modules):
                for s in STREAMS:
                    if (t, m, s) not in self.records:
                        yield (t, m, s)

    def require_length(self, n: int) -> None:
        if len(self.timesteps) < n:
            raise InsufficientData(f"trace has {len(self.timesteps)} timesteps, need {n}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (
            self.n_modules == other.n_modules
            and self.shape == other.shape
            and self.timesteps == other.timesteps
            and self.full_compute_log == other.full_compute_log
            and self.records.keys() == other.records.keys()
            and all(np.array_equal(v, other.records[k]) for k, v in self.records.items())
        )


def trace_write(trace: Trace, path: str | os.PathLike) -> None:
    header = {
        "type": "header",
        "version": VERSION,
        "n_modules": trace.n_modules,
        "shape": list(trace.shape),
        "timesteps": trace.timesteps,
    }
    if trace.full_compute_log is not None:
        header["full_compute_log"] = list(trace.full_compute_log)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for t in trace.timesteps:
            for m in range(trace.n_modules):
                for s in STREAMS:
                    rec = {
                        "type": "feature",
                        "t": t,
                        "module": m,
                        "stream": s,
                        "data": trace.records[(t, m, s)].ravel().tolist(),
                    }
                    fh.write(json.dumps(rec) + "\n")


def _parse_header(line: str) -> Trace:
    try:
        head = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"header is not valid JSON: {exc}") from None
    if not isinstance(head, dict) or head.get("type") != "header":
        raise FormatError("first line is not a header object")
    if head.get("version") != VERSION:
        raise FormatError(f"unsupported trace version {head.get('version')!r}")
    n_modules, shape, timesteps = head.get("n_modules"), head.get("shape"), head.get("timesteps")
    if not isinstance(n_modules, int) or isinstance(n_modules, bool) or n_modules < 1:
        raise FormatError(f"bad n_modules {n_modules!r}")
    if (
        not isinstance(shape, list)
        or not shape
        or not all(isinstance(s, int) and not isinstance(s, bool) and s > 0 for s in shape)
    ):
        raise FormatError(f"bad shape {shape!r}")
    if not isinstance(timesteps, list) or not all(isinstance(t, int) for t in timesteps):
        raise FormatError("timesteps must be a list of integers")
    if any(a <= b for a, b in zip(timesteps, timesteps[1:])):
        raise FormatError("timesteps must be strictly decreasing")
    fc_log = head.get("full_compute_log")
    if fc_log is not None and (
        not isinstance(fc_log, list) or not all(isinstance(t, int) and t in timesteps for t in fc_log)
    ):
        raise FormatError("full_compute_log must list timesteps from the header")
    return Trace(n_modules, tuple(shape), timesteps, full_compute_log=fc_log)


def trace_read(path: str | os.PathLike) -> Trace:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise FormatError("empty trace file")
    trace = _parse_header(lines[0])
    size = math.prod(trace.shape)
    valid_t = set(trace.timesteps)
    body = lines[1:]
    for lineno, line in enumerate(body, start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            if lineno == len(lines) and not text.endswith("\n"):
                # partial final line: the file was cut off mid-record
                break
            raise FormatError(f"line {lineno}: malformed record") from None
        if not isinstance(rec, dict) or rec.get("type") != "feature":
            raise FormatError(f"line {lineno}: not a feature record")
        t, m, s, data = rec.get("t"), rec.get("module"), rec.get("stream"), rec.get("data")
        if t not in valid_t:
            raise FormatError(f"line {lineno}: timestep {t!r} not declared in header")
        if not isinstance(m, int) or not 0 <= m < trace.n_modules:
            raise FormatError(f"line {lineno}: module {m!r} out of range")
        if s not in STREAMS:
            raise FormatError(f"line {lineno}: unknown stream {s!r}")
        if not isinstance(data, list) or len(data) != size:
            got = len(data) if isinstance(data, list) else type(data).__name__
            raise FormatError(
                f"line {lineno}: (t={t}, module={m}, stream={s}) has {got} values, "
                f"shape {list(trace.shape)} needs {size}"
            )
        if (t, m, s) in trace.records:
            raise FormatError(f"line {lineno}: duplicate record (t={t}, module={m}, stream={s})")
        try:
            arr = np.array(data, dtype=np.float64).reshape(trace.shape)
        except (TypeError, ValueError):
            raise FormatError(f"line {lineno}: non-numeric data") from None
        trace.records[(t, m, s)] = arr
    for t, m, s in trace.missing():
        raise FormatError(f"missing record (t={t}, module={m}, stream={s})")
    return trace
