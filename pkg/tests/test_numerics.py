"""Softmax, layer norm, label smoothing, Adam and the learning-rate schedule."""

import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import gradcheck
from divtrans import numerics as nx
from divtrans.errors import InvalidArgumentError


class TestSoftmax:
    def test_symmetric_pair(self):
        np.testing.assert_array_equal(nx.softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_large_values_do_not_overflow(self):
        out = nx.softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)

    def test_matches_high_precision_oracle(self, rng):
        getcontext().prec = 50
        for _ in range(20):
            v = rng.normal(scale=3, size=8)
            exps = [Decimal(float(x)).exp() for x in v]
            total = sum(exps)
            want = np.array([float(e / total) for e in exps])
            np.testing.assert_allclose(nx.softmax(v), want, rtol=0, atol=1e-9)

    def test_empty_input_rejected(self):
        with pytest.raises(InvalidArgumentError):
            nx.softmax(np.array([]))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-1e4, 1e4)))
    def test_probability_vector(self, v):
        out = nx.softmax(v)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-6

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, 6, elements=st.floats(-50, 50), unique=True))
    def test_monotone(self, v):
        out = nx.softmax(v)
        order = np.argsort(v)
        assert np.all(np.diff(out[order]) >= 0)

    def test_log_softmax_consistent(self, rng):
        v = rng.normal(size=(4, 9))
        np.testing.assert_allclose(np.exp(nx.log_softmax(v)), nx.softmax(v), atol=1e-12)


class TestLayerNorm:
    def test_constant_vector_maps_to_zero(self):
        np.testing.assert_array_equal(nx.layer_norm(np.ones(4), np.ones(4), np.zeros(4)), np.zeros(4))

    def test_already_normalised(self):
        out = nx.layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2))
        np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-5)

    def test_matches_direct_formula(self, rng):
        for _ in range(20):
            v = rng.normal(loc=3, scale=2, size=10)
            out = nx.layer_norm(v, np.ones(10), np.zeros(10))
            want = (v - v.mean()) / np.sqrt(v.var() + 1e-6)
            np.testing.assert_allclose(out, want, atol=1e-6)
            assert abs(out.mean()) < 1e-6
            assert abs(out.var() - 1) < 1e-5

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            nx.layer_norm(np.ones(4), np.ones(3), np.zeros(4))


class TestLabelSmoothing:
    def test_zero_smoothing_is_cross_entropy(self, rng):
        logits = rng.normal(size=7)
        loss, _ = nx.label_smoothed_loss(logits, 2, 0.0)
        assert loss == pytest.approx(-nx.log_softmax(logits)[2], abs=1e-12)

    @pytest.mark.parametrize("smoothing", [0.0, 0.1, 0.5])
    def test_uniform_logits_give_log_v(self, smoothing):
        loss, _ = nx.label_smoothed_loss(np.zeros(11), 4, smoothing)
        assert loss == pytest.approx(math.log(11), abs=1e-12)

    def test_gradient_is_softmax_minus_target(self, rng):
        logits = rng.normal(size=6)
        _, grad = nx.label_smoothed_loss(logits, 1, 0.1)
        q = np.full(6, 0.1 / 5)
        q[1] = 0.9
        np.testing.assert_allclose(grad, nx.softmax(logits) - q, atol=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            nx.label_smoothed_loss(np.zeros(5), 5, 0.1)

    def test_smoothing_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            nx.label_smoothed_loss(np.zeros(5), 0, 1.0)

    def test_padding_rows_ignored(self, rng):
        logits = rng.normal(size=(3, 5))
        loss_masked, grad = nx.label_smoothed_loss_batch(logits, np.array([0, 1, 2]), 0.1, np.array([1.0, 1.0, 0.0]))
        loss_two, _ = nx.label_smoothed_loss_batch(logits[:2], np.array([0, 1]), 0.1)
        assert loss_masked == pytest.approx(loss_two, abs=1e-12)
        assert np.all(grad[2] == 0)


class TestGradients:
    @pytest.mark.parametrize("seed", range(20))
    def test_every_op_matches_finite_differences(self, seed):
        errs = gradcheck.per_op_errors(np.random.default_rng(seed))
        worst = max(errs, key=errs.get)
        assert errs[worst] < 1e-4, (worst, errs[worst])

    def test_numerical_gradient_restores_input(self, rng):
        x = rng.normal(size=5)
        before = x.copy()
        nx.numerical_gradient(lambda z: float((z**2).sum()), x)
        np.testing.assert_array_equal(x, before)


class TestAdam:
    cfg = nx.OptimizerConfig()

    def test_zero_gradient_keeps_params(self):
        params = {"w": np.arange(4.0)}
        new, _ = nx.adam_step(params, {"w": np.zeros(4)}, nx.AdamState(), 1, 1e-3, self.cfg)
        np.testing.assert_array_equal(new["w"], params["w"])

    def test_first_step_moves_by_lr(self):
        new, _ = nx.adam_step({"w": np.array(0.0)}, {"w": np.array(1.0)}, nx.AdamState(), 1, 0.001, self.cfg)
        assert abs(float(new["w"]) + 0.001) < 1e-6

    def test_deterministic_over_100_steps(self, rng):
        grads = [rng.normal(size=(3, 3)) for _ in range(100)]

        def run():
            params, state = {"w": np.ones((3, 3))}, nx.AdamState()
            for step, g in enumerate(grads, 1):
                params, state = nx.adam_step(params, {"w": g}, state, step, 1e-3, self.cfg)
            return params["w"]

        np.testing.assert_array_equal(run(), run())

    def test_shape_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            nx.adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, nx.AdamState(), 1, 1e-3, self.cfg)

    def test_does_not_mutate_inputs(self):
        params = {"w": np.ones(3)}
        nx.adam_step(params, {"w": np.ones(3)}, nx.AdamState(), 1, 1e-3, self.cfg)
        np.testing.assert_array_equal(params["w"], np.ones(3))

    @pytest.mark.parametrize("kw", [{"beta1": 1.0}, {"beta2": 0.0}, {"epsilon": 0.0}, {"warmup_steps": 0},
                                    {"label_smoothing": 1.0}])
    def test_config_validation(self, kw):
        with pytest.raises(InvalidArgumentError):
            nx.OptimizerConfig(**kw)


class TestSchedule:
    def test_defaults(self):
        cfg = nx.OptimizerConfig()
        assert (cfg.beta1, cfg.beta2, cfg.epsilon, cfg.warmup_steps, cfg.label_smoothing) == (0.9, 0.98, 1e-9, 8000, 0.1)

    def test_peak_value(self):
        assert nx.lr_at(8000, nx.OptimizerConfig(d_model=512, warmup_steps=8000)) == pytest.approx(4.941e-4, rel=1e-3)

    def test_branches_meet_at_warmup(self):
        w = 400
        assert w**-0.5 == pytest.approx(w * w**-1.5, rel=1e-12)
        cfg = nx.OptimizerConfig(d_model=64, warmup_steps=w)
        assert nx.lr_at(w - 1, cfg) < nx.lr_at(w, cfg) > nx.lr_at(w + 1, cfg)

    def test_step_zero_rejected(self):
        with pytest.raises(InvalidArgumentError):
            nx.lr_at(0, nx.OptimizerConfig())
