import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relcache.errors import InsufficientHistory, InvalidConfig
from relcache.policies import ModuleCache
from relcache.scheduler import (
    Action,
    SchedulerSpec,
    SchedulerState,
    fixed_interval_nfc,
    input_forecast_error,
    nfc,
    observe_and_decide,
    predict_input,
)


def cache_of(inputs, order=1):
    c = ModuleCache.for_order(0, order)
    for t, v in inputs:
        c.on_full_compute(t, np.asarray(v, dtype=float), np.zeros(2))
    return c


def post_warmup_state():
    st_ = SchedulerState.start(1)
    st_.warmup_remaining = 0
    return st_


def observed_with_error(eps):
    # forecast is [1, 0]; [1 - eps/2, eps/2] has unit L1 norm and L1 distance eps
    return np.array([1.0 - eps / 2, eps / 2])


class TestSpecParsing:
    @pytest.mark.parametrize(
        "text,expected",
        [
            ("fixed:N=4", SchedulerSpec("fixed", interval=4)),
            ("distance:delta=0.05", SchedulerSpec("distance", delta=0.05)),
            ("rcs:tau=0.2", SchedulerSpec("rcs", tau=0.2)),
            ("rcs:tau=0.2,scope=all", SchedulerSpec("rcs", tau=0.2, scope="all")),
            ("rcs:tau=inf", SchedulerSpec("rcs", tau=math.inf)),
        ],
    )
    def test_parse(self, text, expected):
        assert SchedulerSpec.parse(text) == expected
        assert SchedulerSpec.parse(expected.label) == expected

    @pytest.mark.parametrize(
        "text", ["fixed:N=0", "distance:delta=0", "rcs:tau=-1", "rcs:tau=0.1,scope=some", "rcs", "never:x=1", "fixed:N=2,x=1"]
    )
    def test_parse_rejects(self, text):
        with pytest.raises(InvalidConfig):
            SchedulerSpec.parse(text)

    def test_with_threshold(self):
        assert SchedulerSpec.parse("rcs:tau=0.1,scope=all").with_threshold(0.3) == SchedulerSpec("rcs", tau=0.3, scope="all")
        assert SchedulerSpec.parse("fixed:N=2").with_threshold(5).interval == 5


class TestPredictInput:
    def test_example(self):
        c = cache_of([(14, [0.5, 0]), (10, [1.0, 0])])
        np.testing.assert_allclose(predict_input(c, 8, 1), [1.25, 0.0], rtol=1e-15)

    def test_empty(self):
        with pytest.raises(InsufficientHistory):
            predict_input(ModuleCache(0), 5, 1)

    def test_all_module_error_is_a_sum(self):
        a = cache_of([(14, [1, 0]), (10, [1, 0])])
        b = cache_of([(14, [0, 2]), (10, [0, 2])])
        obs = [observed_with_error(0.1), np.array([0.0, 2.5])]
        assert input_forecast_error(obs, [a, b], 9, 1) == pytest.approx(0.1 + 0.2, rel=1e-12)


class TestWarmup:
    @pytest.mark.parametrize("m", [1, 2, 3])
    def test_forces_m_plus_one_full_computes(self, m):
        spec = SchedulerSpec("rcs", tau=1e9)
        state = SchedulerState.start(m)
        for t in range(50, 50 - (m + 1), -1):
            d, state = observe_and_decide(state, spec, [], [], t, m)
            assert d.action is Action.FULL and d.eps_in is None
        assert state.full_compute_log == list(range(50, 50 - (m + 1), -1))
        assert state.warmup_remaining == 0


class TestRCS:
    def test_accumulation_example(self):
        spec = SchedulerSpec("rcs", tau=0.2)
        c = cache_of([(50, [1, 0]), (49, [1, 0])])
        state = post_warmup_state()
        d1, state = observe_and_decide(state, spec, [observed_with_error(0.10)], [c], 48, 1)
        assert d1.action is Action.PREDICT
        assert d1.trigger_value == pytest.approx(0.10)
        d2, state = observe_and_decide(state, spec, [observed_with_error(0.15)], [c], 47, 1)
        assert d2.action is Action.FULL
        assert d2.trigger_value == pytest.approx(0.25)
        # the sum resets at the full compute
        assert state.accumulated_error == 0.0 and state.steps_since_full == 0
        assert state.full_compute_log == [47]

    def test_exact_threshold_predicts(self):
        # strictly greater is required
        spec = SchedulerSpec("rcs", tau=0.5)
        c = cache_of([(50, [2, 0]), (49, [2, 0])])
        d, _ = observe_and_decide(post_warmup_state(), spec, [np.array([1.0, 0.0])], [c], 48, 1)
        assert d.trigger_value == 1.0
        spec = SchedulerSpec("rcs", tau=1.0)
        d, _ = observe_and_decide(post_warmup_state(), spec, [np.array([1.0, 0.0])], [c], 48, 1)
        assert d.action is Action.PREDICT

    @given(st.floats(1e-6, 1.0))
    def test_zero_threshold_always_full(self, eps):
        c = cache_of([(50, [1, 0]), (49, [1, 0])])
        state = post_warmup_state()
        for t in (48, 47, 46):
            d, state = observe_and_decide(state, SchedulerSpec("rcs", tau=0.0), [observed_with_error(eps)], [c], t, 1)
            assert d.action is Action.FULL

    def test_perfect_forecast_never_triggers_at_zero_error(self):
        c = cache_of([(50, [1, 0]), (49, [2, 0])])
        state = post_warmup_state()
        d, state = observe_and_decide(state, SchedulerSpec("rcs", tau=0.0), [np.array([3.0, 0.0])], [c], 48, 1)
        assert d.action is Action.PREDICT and d.trigger_value == 0.0

    def test_needs_two_inputs_after_warmup(self):
        c = cache_of([(50, [1, 0])])
        with pytest.raises(InsufficientHistory):
            observe_and_decide(post_warmup_state(), SchedulerSpec("rcs", tau=0.1), [np.ones(2)], [c], 49, 1)


class TestFixed:
    @pytest.mark.parametrize("T,N,w", [(50, 4, 2), (50, 1, 2), (50, 5, 3), (20, 7, 4), (10, 50, 2)])
    def test_count_formula(self, T, N, w):
        spec = SchedulerSpec("fixed", interval=N)
        c = cache_of([(T + 2, [1, 0]), (T + 1, [2, 0])])
        state = SchedulerState.start(w - 1)
        for t in range(T, 0, -1):
            d, state = observe_and_decide(state, spec, [np.array([float(t), 1.0])], [c], t, 1)
        assert nfc(state, w) == fixed_interval_nfc(T, N, w) == w + math.ceil((T - w) / N)

    def test_known_count(self):
        assert fixed_interval_nfc(50, 4, 2) == 14

    def test_gaps_equal_interval_after_warmup(self):
        spec = SchedulerSpec("fixed", interval=3)
        c = cache_of([(60, [1, 0]), (59, [2, 0])])
        state = SchedulerState.start(1)
        for t in range(30, 0, -1):
            _, state = observe_and_decide(state, spec, [np.array([1.0, 1.0])], [c], t, 1)
        log = state.full_compute_log
        # warmup, then the first post-warmup step, then every third step
        assert log[:3] == [30, 29, 28]
        assert all(a - b == 3 for a, b in zip(log[2:], log[3:]))

    def test_nfc_rejects_short_log(self):
        with pytest.raises(ValueError):
            nfc(SchedulerState.start(1), warmup=2)


class TestDistance:
    def test_threshold_on_last_cached_input(self):
        spec = SchedulerSpec("distance", delta=0.1)
        c = cache_of([(50, [1, 0]), (49, [1, 0])])
        d, state = observe_and_decide(post_warmup_state(), spec, [np.array([1.05, 0.0])], [c], 48, 1)
        assert d.action is Action.PREDICT
        assert d.trigger_value == pytest.approx(0.05 / 1.05)
        d, state = observe_and_decide(state, spec, [np.array([1.5, 0.0])], [c], 47, 1)
        assert d.action is Action.FULL
