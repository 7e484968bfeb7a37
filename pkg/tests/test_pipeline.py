import dataclasses
import math

import numpy as np
import pytest

from relcache.errors import InvalidConfig, ShapeMismatch
from relcache.features import rel_l1_error
from relcache.pipeline import (
    LN_EPS,
    ModuleParams,
    PipelineConfig,
    block_expensive_op,
    block_pre_op,
    build_pipeline,
    run_no_cache,
    run_reference,
    run_sampling,
)
from relcache.policies import PolicySpec
from relcache.scheduler import SchedulerSpec

SMALL = PipelineConfig(depth=2, width=16, seq_len=4, T=20, seed=3)


def params_equal(a, b):
    for fa, fb in zip(dataclasses.astuple(a), dataclasses.astuple(b)):
        if isinstance(fa, dict):
            if fa.keys() != fb.keys() or not all(np.array_equal(fa[k], fb[k]) for k in fa):
                return False
        elif isinstance(fa, np.ndarray):
            if not np.array_equal(fa, fb):
                return False
        elif fa != fb:
            return False
    return True


def plain_params(kind, width, **weights):
    z = np.zeros(width)
    return ModuleParams(kind, np.ones(width), z, z, z, np.ones(width), z, weights)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(depth=0), dict(width=1), dict(seq_len=0), dict(T=3), dict(alpha_schedule="step")]
    )
    def test_bounds(self, kwargs):
        with pytest.raises(InvalidConfig):
            PipelineConfig(**kwargs)

    def test_from_mapping(self):
        cfg = PipelineConfig.from_mapping({"depth": "2", "T": "30", "alpha_schedule": "cosine"})
        assert cfg == PipelineConfig(depth=2, T=30, alpha_schedule="cosine")
        with pytest.raises(InvalidConfig):
            PipelineConfig.from_mapping({"heads": "4"})


class TestBuild:
    def test_deterministic(self):
        a, b = build_pipeline(SMALL), build_pipeline(SMALL)
        assert all(params_equal(x, y) for x, y in zip(a.modules, b.modules))
        assert np.array_equal(a.head, b.head) and np.array_equal(a.pos_embed, b.pos_embed)

    def test_seed_changes_parameters(self):
        a, b = build_pipeline(SMALL), build_pipeline(dataclasses.replace(SMALL, seed=4))
        assert not all(params_equal(x, y) for x, y in zip(a.modules, b.modules))

    def test_module_enumeration(self):
        p = build_pipeline(SMALL)
        assert p.n_modules == 4
        assert [m.kind for m in p.modules] == ["attention", "mlp", "attention", "mlp"]


class TestPreOp:
    def test_constant_row_stays_finite(self):
        p = build_pipeline(SMALL)
        out = block_pre_op(np.full((4, 16), 3.0), 7, p.modules[0], SMALL.T)
        assert np.all(np.isfinite(out))

    def test_moments(self, rng):
        w = 16
        params = plain_params("mlp", w)
        shift_amp = rng.uniform(0.1, 0.5, w)
        params = dataclasses.replace(params, mod_shift_amp=shift_amp)
        hidden = rng.standard_normal((4, w)) * 3 + 1
        t, T = 7, 20
        out = block_pre_op(hidden, t, params, T)
        shift = shift_amp * np.cos(2 * math.pi * params.mod_freq * t / T + params.mod_phase)
        normed = out - shift
        np.testing.assert_allclose(normed.mean(axis=1), 0.0, atol=1e-12)
        var = hidden.var(axis=1)
        np.testing.assert_allclose(normed.var(axis=1), var / (var + LN_EPS), rtol=1e-12)
        np.testing.assert_allclose(out.mean(axis=1), shift.mean(), atol=1e-12)

    def test_timestep_conditioning(self, rng):
        p = build_pipeline(SMALL)
        h = rng.standard_normal((4, 16))
        np.testing.assert_array_equal(p.pre_op(0, h, 5), p.pre_op(0, h, 5))
        assert not np.allclose(p.pre_op(0, h, 5), p.pre_op(0, h, 6))


class TestExpensiveOp:
    def test_single_token_attention(self, rng):
        p = build_pipeline(dataclasses.replace(SMALL, seq_len=1))
        x = rng.standard_normal((1, 16))
        np.testing.assert_allclose(block_expensive_op(x, p.modules[0]), x @ p.modules[0].weights["wv"], rtol=1e-14)

    def test_identity_mlp(self, rng):
        w = 8
        params = plain_params("mlp", w, w1=np.eye(w), b1=np.zeros(w), w2=np.eye(w), b2=np.zeros(w))
        x = rng.standard_normal((3, w))
        np.testing.assert_array_equal(block_expensive_op(x, params, activation=lambda v: v), x)

    def test_attention_loop_oracle(self, rng):
        p = build_pipeline(SMALL)
        mod = p.modules[0]
        x = rng.standard_normal((4, 16))
        W = mod.weights
        q, k, v = x @ W["wq"], x @ W["wk"], x @ W["wv"]
        expect = np.zeros_like(x)
        for i in range(4):
            logits = [sum(q[i, c] * k[j, c] for c in range(16)) / 4.0 for j in range(4)]
            ex = [math.exp(s) for s in logits]
            for j in range(4):
                expect[i] += ex[j] / sum(ex) * v[j]
        np.testing.assert_allclose(block_expensive_op(x, mod), expect, rtol=1e-12, atol=1e-12)

    def test_mlp_loop_oracle(self, rng):
        p = build_pipeline(SMALL)
        mod = p.modules[1]
        W = mod.weights
        x = rng.standard_normal((4, 16))
        g = lambda z: 0.5 * z * (1 + math.tanh(math.sqrt(2 / math.pi) * (z + 0.044715 * z**3)))
        hid = np.array([[g(sum(x[r, c] * W["w1"][c, j] for c in range(16)) + W["b1"][j]) for j in range(32)] for r in range(4)])
        expect = hid @ W["w2"] + W["b2"]
        np.testing.assert_allclose(block_expensive_op(x, mod), expect, rtol=1e-12, atol=1e-12)

    def test_shape_mismatch(self):
        p = build_pipeline(SMALL)
        for mod in p.modules[:2]:
            with pytest.raises(ShapeMismatch):
                block_expensive_op(np.zeros((4, 15)), mod)


class TestSampling:
    def test_interval_one_matches_reference_bitwise(self):
        p = build_pipeline(SMALL)
        ref = run_reference(p, 5)
        res = run_sampling(p, PolicySpec("taylor"), SchedulerSpec("fixed", interval=1), 5)
        assert np.array_equal(res.latent, ref)
        assert np.array_equal(run_no_cache(p, 5).latent, ref)
        assert res.metrics.nfc == SMALL.T

    def test_taylor_first_order_equals_unit_linear(self):
        p = build_pipeline(SMALL)
        sched = SchedulerSpec("fixed", interval=3)
        a = run_sampling(p, PolicySpec("taylor", order=1), sched, 2).latent
        b = run_sampling(p, PolicySpec("linear", weight=1.0), sched, 2).latent
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)

    def test_deterministic_log(self):
        p = build_pipeline(SMALL)
        args = (p, PolicySpec("rfe"), SchedulerSpec("rcs", tau=0.1), 9)
        a, b = run_sampling(*args, ghost_reference=True), run_sampling(*args, ghost_reference=True)
        assert a.metrics == b.metrics
        assert np.array_equal(a.latent, b.latent)

    def test_ghost_reference_does_not_change_trajectory(self):
        p = build_pipeline(SMALL)
        args = (p, PolicySpec("rfe"), SchedulerSpec("fixed", interval=4), 1)
        assert np.array_equal(run_sampling(*args).latent, run_sampling(*args, ghost_reference=True).latent)

    def test_caches_hold_expensive_output_without_residual(self):
        p = build_pipeline(SMALL)
        res = run_sampling(p, PolicySpec("taylor"), SchedulerSpec("fixed", interval=3), 0, record_trace=True)
        tr = res.trace
        for t in res.metrics.full_compute_log:
            for i in range(p.n_modules):
                np.testing.assert_array_equal(tr.get(t, i, "output"), p.expensive_op(i, tr.get(t, i, "input")))

    def test_ghost_errors_match_trace(self):
        p = build_pipeline(SMALL)
        policy, sched = PolicySpec("rfe"), SchedulerSpec("rcs", tau=0.15)
        res = run_sampling(p, policy, sched, 0, record_trace=True, ghost_reference=True)
        # offline oracle: rebuild every prediction from the trace and compare
        from relcache.analysis import replay_policy

        rep = replay_policy(res.trace, policy, sched)
        assert rep.log.full_compute_log == res.metrics.full_compute_log
        for online, offline in zip(res.metrics.steps, rep.log.steps):
            np.testing.assert_allclose(online.eps_out, offline.eps_out, rtol=1e-12, atol=1e-15)

    def test_predicted_error_positive_and_nfc_lower(self):
        p = build_pipeline(SMALL)
        res = run_sampling(p, PolicySpec("reuse"), SchedulerSpec("fixed", interval=4), 0, ghost_reference=True)
        assert res.metrics.nfc < SMALL.T
        assert res.metrics.mean_eps_out() > 0
