"""Estimator architecture, gradients, and checkpoint format."""

from __future__ import annotations

import numpy as np
import pytest

from awbe.errors import CheckpointFormatError, NumericError, ShapeError, StaleTapeError
from awbe.model import (
    Chromaticity,
    ModelConfig,
    backward,
    chroma_to_illuminant,
    flops,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from awbe.training import angular_loss, predicted_illuminants


def tiny_config(**kw) -> ModelConfig:
    defaults = dict(bins=8, time_capture_dim=27, seed=3)
    defaults.update(kw)
    return ModelConfig(**defaults)


def random_inputs(rng, config: ModelConfig, n: int):
    hist = rng.uniform(0, 1, size=(n, config.bins, config.bins, 4))
    tc = rng.uniform(0, 1, size=(n, config.time_capture_dim))
    return hist, tc


class TestParameterBudget:
    def analytic_count(self, d: int, conv=(8, 16, 16)) -> int:
        c1, c2, c3 = conv
        total = (d * 16 + 16)                       # time branch affine
        total += (4 * 9 * c1 + c1) + (c1 * 9 * c2 + c2) + (c2 * 9 * c3 + c3)
        total += c3 * 16 + 16                       # post-pool affine
        total += 2 * 32                             # batch-norm scale/shift
        total += 32 * 16 + 16 + 16 * 2 + 2          # fusion head
        return total

    def test_runtime_tally_matches_closed_form(self):
        for d in (15, 21, 27):
            params = init_params(ModelConfig(time_capture_dim=d))
            assert params.param_count() == self.analytic_count(d)

    def test_default_budget_window(self):
        base = init_params(ModelConfig()).param_count()
        assert 4500 <= base <= 5500

    def test_capture_blocks_add_96_each(self):
        base = init_params(ModelConfig(time_capture_dim=15)).param_count()
        with_n = init_params(ModelConfig(time_capture_dim=21)).param_count()
        with_nr = init_params(ModelConfig(time_capture_dim=27)).param_count()
        assert with_n - base == 96
        assert with_nr - with_n == 96
        assert 4500 <= with_nr <= 5500

    def test_flops_budget(self):
        assert flops(ModelConfig()) <= 25_000_000


class TestForward:
    def test_deterministic_for_fixed_seed(self, rng):
        config = tiny_config()
        hist, tc = random_inputs(rng, config, 2)
        out1, _ = forward(init_params(config), hist, tc, mode="eval")
        out2, _ = forward(init_params(config), hist, tc, mode="eval")
        assert np.array_equal(out1, out2)
        assert np.all(np.isfinite(out1))

    def test_eval_batch_independence(self, rng):
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 1)
        single, _ = forward(params, hist, tc, mode="eval")
        doubled, _ = forward(
            params, np.concatenate([hist, hist]), np.concatenate([tc, tc]), mode="eval"
        )
        np.testing.assert_array_equal(doubled[0], doubled[1])
        # Across batch sizes BLAS may pick different kernels; equality
        # is only bit-exact within one batch.
        np.testing.assert_allclose(doubled[0], single[0], atol=1e-12)

    def test_single_sample_without_batch_axis(self, rng):
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 1)
        batched, _ = forward(params, hist, tc, mode="eval")
        flat, _ = forward(params, hist[0], tc[0], mode="eval")
        np.testing.assert_array_equal(batched, flat)

    def test_train_mode_updates_running_stats(self, rng):
        config = tiny_config()
        params = init_params(config)
        before = params.tensors["l_bn.running_mean"].copy()
        hist, tc = random_inputs(rng, config, 4)
        forward(params, hist, tc, mode="train")
        assert not np.array_equal(params.tensors["l_bn.running_mean"], before)

    def test_eval_mode_is_pure(self, rng):
        config = tiny_config()
        params = init_params(config)
        snapshot = {k: v.copy() for k, v in params.tensors.items()}
        hist, tc = random_inputs(rng, config, 3)
        forward(params, hist, tc, mode="eval")
        for k, v in params.tensors.items():
            np.testing.assert_array_equal(v, snapshot[k])

    def test_shape_mismatch(self, rng):
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 2)
        with pytest.raises(ShapeError):
            forward(params, hist[:, :4, :4, :], tc, mode="eval")
        with pytest.raises(ShapeError):
            forward(params, hist, tc[:, :10], mode="eval")

    def test_non_finite_weights_name_the_layer(self, rng):
        config = tiny_config()
        params = init_params(config)
        params.tensors["h_conv2.w"][0, 0, 0, 0] = np.nan
        hist, tc = random_inputs(rng, config, 1)
        with pytest.raises(NumericError, match="h_conv2"):
            forward(params, hist, tc, mode="eval")


class TestBackward:
    def test_finite_difference_spot_check(self, rng):
        # The full-parameter sweep lives in the acceptance suite; this
        # samples a few entries per tensor to keep the unit run fast.
        scale = 1e-3
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 4)
        gt = rng.uniform(0.2, 1.0, size=(4, 3))
        gt /= np.linalg.norm(gt, axis=1, keepdims=True)

        def loss_value():
            chroma, _ = forward(params, hist, tc, mode="train")
            return scale * angular_loss(chroma, gt)[0]

        chroma, tape = forward(params, hist, tc, mode="train")
        _, _, d_chroma = angular_loss(chroma, gt)
        grads = backward(params, tape, scale * d_chroma)

        step = 1e-4
        for name in params.learnable_names:
            flat = params.tensors[name].reshape(-1)
            gflat = grads[name].reshape(-1)
            for i in rng.choice(flat.size, size=min(6, flat.size), replace=False):
                orig = flat[i]
                flat[i] = orig + step
                lp = loss_value()
                flat[i] = orig - step
                lm = loss_value()
                flat[i] = orig
                num = (lp - lm) / (2 * step)
                assert abs(gflat[i] - num) / max(abs(num), 1e-8) < 1e-4, name

    def test_duplicated_sample_doubles_sum_gradient(self, rng):
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 1)
        gsingle = rng.normal(size=(1, 2))

        # Eval-style BN stats would differ between the two runs in train
        # mode only through batch statistics; a duplicated sample leaves
        # them identical, so backward linearity is observable directly.
        _, tape1 = forward(params, hist, tc, mode="train")
        g1 = backward(params, tape1, gsingle)
        _, tape2 = forward(
            params, np.concatenate([hist, hist]), np.concatenate([tc, tc]), mode="train"
        )
        g2 = backward(params, tape2, np.concatenate([gsingle, gsingle]))
        for name in g1:
            np.testing.assert_allclose(g2[name], 2.0 * g1[name], rtol=1e-9, atol=1e-12)

    def test_stale_tape_after_update(self, rng):
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 2)
        _, tape = forward(params, hist, tc, mode="train")
        params.version += 1  # stands in for an optimizer step
        with pytest.raises(StaleTapeError):
            backward(params, tape, np.zeros((2, 2)))

    def test_eval_tape_rejected(self, rng):
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 2)
        _, tape = forward(params, hist, tc, mode="eval")
        with pytest.raises(StaleTapeError):
            backward(params, tape, np.zeros((2, 2)))

    def test_loss_grad_shape_checked(self, rng):
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 2)
        _, tape = forward(params, hist, tc, mode="train")
        with pytest.raises(ShapeError):
            backward(params, tape, np.zeros((3, 2)))


class TestChromaToIlluminant:
    def test_neutral(self):
        ill = chroma_to_illuminant(Chromaticity(rg=1.0, bg=1.0))
        np.testing.assert_allclose(ill.rgb, 1.0 / np.sqrt(3.0), atol=1e-12)

    def test_warm(self):
        ill = chroma_to_illuminant((2.0, 0.5))
        expected = np.array([2.0, 1.0, 0.5]) / np.sqrt(5.25)
        np.testing.assert_allclose(ill.rgb, expected, atol=1e-9)
        assert ill.rgb[0] == pytest.approx(0.8729, abs=1e-4)
        assert ill.rgb[1] == pytest.approx(0.4364, abs=1e-4)
        assert ill.rgb[2] == pytest.approx(0.2182, abs=1e-4)

    def test_negative_component_clamped(self):
        ill = chroma_to_illuminant((-1.0, 1.0))
        expected = np.array([1e-4, 1.0, 1.0])
        np.testing.assert_allclose(ill.rgb, expected / np.linalg.norm(expected), atol=1e-12)

    def test_prediction_always_valid(self, rng):
        config = tiny_config()
        params = init_params(config)
        hist, tc = random_inputs(rng, config, 8)
        chroma, _ = forward(params, hist, tc, mode="eval")
        pred = predicted_illuminants(chroma)
        norms = np.linalg.norm(pred, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)
        assert np.all(pred > 0.0)


class TestCheckpoint:
    def test_round_trip_bytes(self, tmp_path, rng):
        params = init_params(tiny_config())
        hist, tc = random_inputs(rng, params.config, 4)
        forward(params, hist, tc, mode="train")  # move running stats off init
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(params, p1)
        loaded = load_checkpoint(p1)
        save_checkpoint(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loaded_config_matches(self, tmp_path):
        params = init_params(tiny_config(bins=16, seed=11))
        path = tmp_path / "c.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.config == params.config

    def test_corrupted_magic_rejected(self, tmp_path):
        params = init_params(tiny_config())
        path = tmp_path / "bad.ckpt"
        save_checkpoint(params, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_truncated_payload_rejected(self, tmp_path):
        params = init_params(tiny_config())
        path = tmp_path / "trunc.ckpt"
        save_checkpoint(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 64])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_config_mismatch_names_tensor(self, tmp_path):
        params = init_params(ModelConfig(bins=48, time_capture_dim=15))
        path = tmp_path / "h48.ckpt"
        save_checkpoint(params, path)
        with pytest.raises(ShapeError, match="t_fc.w"):
            load_checkpoint(path, expected_config=ModelConfig(bins=48, time_capture_dim=27))

    def test_unsupported_version(self, tmp_path):
        params = init_params(tiny_config())
        path = tmp_path / "v9.ckpt"
        save_checkpoint(params, path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)
