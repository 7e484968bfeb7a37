import math

import numpy as np
import pytest

from relcache.features import SampleHistory


def make_history(points, capacity=None):
    """History from (t, values) pairs given oldest first."""
    h = SampleHistory(capacity or len(points))
    for t, v in points:
        h.push(t, np.asarray(v, dtype=np.float64))
    return h


def lagrange_oracle(ts, values, target):
    """Interpolating polynomial evaluated in Lagrange form (independent of Newton tables)."""
    out = np.zeros_like(np.asarray(values[0], dtype=np.float64))
    for j, (tj, vj) in enumerate(zip(ts, values)):
        w = 1.0
        for i, ti in enumerate(ts):
            if i != j:
                w *= (target - ti) / (tj - ti)
        out = out + w * np.asarray(vj, dtype=np.float64)
    return out


def taylor_sum_oracle(values_oldest_first, stride, k, m):
    """O(t) + sum_i k^i/i! * Delta^i / N^i with Delta^i from an explicit binomial sum."""
    vals = [np.asarray(v, dtype=np.float64) for v in values_oldest_first]
    latest = len(vals) - 1
    out = vals[latest].copy()
    for i in range(1, m + 1):
        # Delta^i O(t) = sum_j (-1)^j C(i, j) O(t + jN)
        diff = sum((-1) ** j * math.comb(i, j) * vals[latest - j] for j in range(i + 1))
        out = out + (k**i / math.factorial(i)) * diff / stride**i
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one verdict line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
