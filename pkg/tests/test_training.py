"""Loss, schedule, optimizer, and the training loop."""

from __future__ import annotations

import math

import numpy as np
import pytest

from awbe.errors import InvalidArgumentError, NumericError
from awbe.model import ModelConfig, forward, init_params
from awbe.training import (
    OptimizerState,
    TrainConfig,
    adam_step,
    angular_error,
    angular_loss,
    lr_at,
    train,
)


class TestAngularError:
    def test_identical_vectors(self):
        assert angular_error((0.5, 0.5, 0.5), (0.5, 0.5, 0.5)) <= 0.03

    def test_orthogonal(self):
        assert angular_error((1, 0, 0), (0, 1, 0)) == pytest.approx(90.0, abs=1e-3)

    def test_forty_five_degrees(self):
        assert angular_error((1, 1, 0), (1, 0, 0)) == pytest.approx(45.0, abs=1e-3)

    def test_scale_invariance(self):
        a = np.array([0.3, 0.8, 0.4])
        b = np.array([0.5, 0.4, 0.9])
        base = angular_error(a, b)
        assert angular_error(7.0 * a, b) == pytest.approx(base, abs=1e-9)
        assert angular_error(a, 0.01 * b) == pytest.approx(base, abs=1e-9)

    def test_zero_vector_rejected(self):
        with pytest.raises(InvalidArgumentError):
            angular_error((0, 0, 0), (1, 0, 0))


class TestAngularLoss:
    def gt(self, rng, n):
        g = rng.uniform(0.2, 1.0, size=(n, 3))
        return g / np.linalg.norm(g, axis=1, keepdims=True)

    def test_gradient_matches_finite_differences(self, rng):
        n = 6
        chroma = rng.uniform(-0.5, 2.0, size=(n, 2))
        gt = self.gt(rng, n)
        for clamp_components in (False, True):
            _, _, grad = angular_loss(chroma, gt, clamp_components=clamp_components)
            step = 1e-7
            for i in range(n):
                for j in range(2):
                    c = chroma.copy()
                    c[i, j] += step
                    lp = angular_loss(c, gt, clamp_components=clamp_components)[0]
                    c[i, j] -= 2 * step
                    lm = angular_loss(c, gt, clamp_components=clamp_components)[0]
                    num = (lp - lm) / (2 * step)
                    assert grad[i, j] == pytest.approx(num, rel=1e-4, abs=1e-9)

    def test_clamped_region_has_zero_gradient(self, rng):
        chroma = np.array([[-0.5, 0.8], [0.9, -2.0]])
        gt = self.gt(rng, 2)
        _, _, grad = angular_loss(chroma, gt, clamp_components=True)
        assert grad[0, 0] == 0.0
        assert grad[1, 1] == 0.0
        assert grad[0, 1] != 0.0
        assert grad[1, 0] != 0.0

    def test_perfect_prediction_hits_clamp_floor(self, rng):
        gt = self.gt(rng, 3)
        chroma = np.stack([gt[:, 0] / gt[:, 1], gt[:, 2] / gt[:, 1]], axis=1)
        loss, errors, grad = angular_loss(chroma, gt)
        assert loss <= 0.03
        np.testing.assert_array_equal(grad, 0.0)  # inside the arccos clamp

    def test_loss_invariant_to_gt_scale(self, rng):
        chroma = rng.uniform(0.2, 2.0, size=(4, 2))
        gt = self.gt(rng, 4)
        base = angular_loss(chroma, gt)[0]
        assert angular_loss(chroma, 5.0 * gt)[0] == pytest.approx(base, abs=1e-9)


class TestLrSchedule:
    def config(self, epochs=400, warmup_steps=1000):
        return TrainConfig(epochs=epochs, warmup_steps=warmup_steps)

    def test_warmup_starts_at_floor(self):
        assert lr_at(self.config(), 0, 0) == pytest.approx(1e-6)

    def test_warmup_reaches_peak(self):
        cfg = self.config(warmup_steps=250)
        assert lr_at(cfg, 4, 250) == pytest.approx(1e-3)
        # The first step of epoch 5 switches to the cosine branch at the
        # same value: the schedule is continuous at the junction.
        assert lr_at(cfg, 5, 251) == pytest.approx(1e-3)

    def test_final_epoch_rate(self):
        cfg = self.config()
        expected = 1e-3 * 0.5 * (1.0 + math.cos(math.pi * 394.0 / 395.0))
        assert lr_at(cfg, 399, 10**6) == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(1.6e-8, rel=0.05)

    def test_monotone_decay_after_warmup(self):
        cfg = self.config()
        rates = [lr_at(cfg, e, 10**6) for e in range(5, 400)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_epoch_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            lr_at(self.config(epochs=10), 10, 0)

    def test_batch_ladder(self):
        cfg = TrainConfig()
        assert cfg.batch_size_at(0) == 8
        assert cfg.batch_size_at(99) == 8
        assert cfg.batch_size_at(100) == 16
        assert cfg.batch_size_at(200) == 32
        assert cfg.batch_size_at(399) == 64


class TestAdam:
    def setup_small(self):
        config = ModelConfig(bins=8, time_capture_dim=15, seed=0)
        params = init_params(config)
        state = OptimizerState.for_params(params)
        return params, state

    def test_zero_gradients_do_nothing(self):
        # Adam normalizes away gradient scale, so even the 1e-9 decay
        # term would produce a visible step; a zero effective gradient
        # means decay off.
        params, state = self.setup_small()
        before = {k: v.copy() for k, v in params.tensors.items()}
        grads = {n: np.zeros_like(params.tensors[n]) for n in params.learnable_names}
        adam_step(params, grads, state, 0.1, TrainConfig(weight_decay=0.0))
        for name in params.learnable_names:
            np.testing.assert_array_equal(params.tensors[name], before[name])

    def test_default_decay_drift_is_bounded(self):
        lr = 0.1
        params, state = self.setup_small()
        before = {k: v.copy() for k, v in params.tensors.items()}
        grads = {n: np.zeros_like(params.tensors[n]) for n in params.learnable_names}
        adam_step(params, grads, state, lr, TrainConfig())
        drift = max(
            np.abs(params.tensors[n] - before[n]).max() for n in params.learnable_names
        )
        assert drift <= 0.1 * lr

    def test_unit_gradient_first_step(self):
        # Bias-corrected m/sqrt(v) is exactly 1 on the first step, so the
        # parameter moves by lr (up to Adam's epsilon).
        params, state = self.setup_small()
        w0 = params.tensors["l_fc2.b"].copy()
        grads = {n: np.zeros_like(params.tensors[n]) for n in params.learnable_names}
        grads["l_fc2.b"][:] = 1.0
        adam_step(params, grads, state, 0.1, TrainConfig(weight_decay=0.0))
        delta = params.tensors["l_fc2.b"] - w0
        np.testing.assert_allclose(delta, -0.1, rtol=1e-7)

    def test_weight_decay_magnitude_bound(self):
        lr = 0.05
        deltas = {}
        for wd in (0.0, 1e-9):
            params, state = self.setup_small()
            params.tensors["l_fc1.w"][:] = 1.0
            grads = {n: np.zeros_like(params.tensors[n]) for n in params.learnable_names}
            grads["l_fc1.w"][:] = 1.0
            adam_step(params, grads, state, lr, TrainConfig(weight_decay=wd))
            deltas[wd] = params.tensors["l_fc1.w"].copy()
        diff = np.abs(deltas[0.0] - deltas[1e-9]).max()
        assert diff <= 1e-10 * lr

    def test_non_finite_gradient_aborts_with_name(self):
        params, state = self.setup_small()
        grads = {n: np.zeros_like(params.tensors[n]) for n in params.learnable_names}
        grads["h_fc.w"][0, 0] = np.inf
        with pytest.raises(NumericError, match="h_fc.w"):
            adam_step(params, grads, state, 0.1, TrainConfig())

    def test_version_bumped(self):
        params, state = self.setup_small()
        v0 = params.version
        grads = {n: np.zeros_like(params.tensors[n]) for n in params.learnable_names}
        adam_step(params, grads, state, 0.1, TrainConfig())
        assert params.version == v0 + 1


def small_problem(rng, n=12, bins=8, dim=15):
    hist = rng.uniform(0, 1, size=(n, bins, bins, 4))
    tc = rng.uniform(0, 1, size=(n, dim))
    gt = rng.uniform(0.2, 1.0, size=(n, 3))
    gt /= np.linalg.norm(gt, axis=1, keepdims=True)
    return hist, tc, gt


class TestTrainLoop:
    def test_identical_seeds_identical_traces(self, rng):
        hist, tc, gt = small_problem(rng)
        mc = ModelConfig(bins=8, time_capture_dim=15, seed=5)
        results = [
            train(hist, tc, gt, mc, TrainConfig(epochs=8, seed=7)) for _ in range(2)
        ]
        a, b = results
        assert [m["train_loss_deg"] for m in a.metrics] == [
            m["train_loss_deg"] for m in b.metrics
        ]
        for name in a.params.tensors:
            np.testing.assert_array_equal(a.params.tensors[name], b.params.tensors[name])

    def test_batch_size_transition_at_100(self, rng):
        hist, tc, gt = small_problem(rng, n=20)
        mc = ModelConfig(bins=8, time_capture_dim=15, seed=0)
        res = train(hist, tc, gt, mc, TrainConfig(epochs=102, seed=0))
        assert res.metrics[99]["batch_size"] == 8
        assert res.metrics[100]["batch_size"] == 16

    def test_validation_selection(self, rng):
        hist, tc, gt = small_problem(rng, n=12)
        hv, tv, gv = small_problem(rng, n=6)
        mc = ModelConfig(bins=8, time_capture_dim=15, seed=1)
        res = train(hist, tc, gt, mc, TrainConfig(epochs=6, seed=1),
                    hist_val=hv, tc_val=tv, gt_val=gv)
        vals = [m["val_mean_deg"] for m in res.metrics]
        assert res.best_val_error == pytest.approx(min(vals))
        assert res.best_epoch == int(np.argmin(vals))

    def test_loss_decreases_smoothed(self, rng):
        hist, tc, gt = small_problem(rng, n=16)
        mc = ModelConfig(bins=8, time_capture_dim=15, seed=2)
        res = train(hist, tc, gt, mc, TrainConfig(epochs=120, seed=2))
        losses = np.array([m["train_loss_deg"] for m in res.metrics])
        # 50-step smoothed windows: late training sits well below the start.
        assert losses[-50:].mean() < losses[:50].mean() * 0.5

    def test_empty_dataset_rejected(self):
        mc = ModelConfig(bins=8, time_capture_dim=15, seed=0)
        with pytest.raises(InvalidArgumentError):
            train(
                np.zeros((0, 8, 8, 4)), np.zeros((0, 15)), np.zeros((0, 3)),
                mc, TrainConfig(epochs=1),
            )

    def test_eval_uses_running_stats(self, rng):
        # After training, eval-mode output for one sample must not depend
        # on which batch it sits in.
        hist, tc, gt = small_problem(rng, n=8)
        mc = ModelConfig(bins=8, time_capture_dim=15, seed=3)
        res = train(hist, tc, gt, mc, TrainConfig(epochs=4, seed=3))
        alone, _ = forward(res.params, hist[2], tc[2], mode="eval")
        grouped, _ = forward(res.params, hist, tc, mode="eval")
        np.testing.assert_allclose(alone[0], grouped[2], atol=1e-12)
