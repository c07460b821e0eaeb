"""Calibration file I/O and per-sample feature extraction."""

from __future__ import annotations

import json

import numpy as np
import pytest

from awbe.dataset import SynthConfig, synthesize
from awbe.errors import CalibrationError, ManifestError
from awbe.features import FeatureConfig
from awbe.pipeline import (
    calibrate,
    extract_split,
    ground_truth,
    load_calibration,
    sample_features,
    save_calibration,
)


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("pipe")
    cfg = SynthConfig(
        width=24, height=20, noise_base_sigma=0.02, mask_fraction=0.3,
        split_fractions=(0.75, 0.25, 0.0),
    )
    return synthesize(21, 8, cfg, out)


class TestCalibration:
    def test_round_trip(self, synth, tmp_path):
        cal = calibrate(synth, bins=8, config=FeatureConfig.parse("nr"))
        path = tmp_path / "cal.json"
        save_calibration(cal, path)
        back = load_calibration(path)
        assert back.grid.bins == 8
        np.testing.assert_allclose(back.grid.u_edges, cal.grid.u_edges)
        np.testing.assert_allclose(back.norm.mins, cal.norm.mins)
        assert back.config == cal.config

    def test_dim_consistency_checked(self, synth, tmp_path):
        cal = calibrate(synth, bins=8, config=FeatureConfig.parse("n"))
        path = tmp_path / "cal.json"
        save_calibration(cal, path)
        doc = json.loads(path.read_text())
        doc["feature_config"] = "nr"  # 27 dims, but min/max carry 21
        path.write_text(json.dumps(doc))
        with pytest.raises(CalibrationError):
            load_calibration(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CalibrationError):
            load_calibration(tmp_path / "none.json")

    def test_empty_split_rejected(self, synth):
        with pytest.raises(CalibrationError):
            calibrate(synth, bins=8, config=FeatureConfig.parse("none"), split="test")


class TestFeatureExtraction:
    def test_shapes_and_ranges(self, synth):
        cal = calibrate(synth, bins=8, config=FeatureConfig.parse("nr"))
        hist, tc = sample_features(synth, synth.samples[0], cal)
        assert hist.shape == (8, 8, 4)
        assert tc.shape == (27,)
        assert np.all(np.isfinite(hist)) and np.all(np.isfinite(tc))
        # Training-split vectors normalize into the unit box.
        assert tc.min() >= 0.0 - 1e-12

    def test_extract_split_aligns(self, synth):
        cal = calibrate(synth, bins=8, config=FeatureConfig.parse("n"))
        hist, tc, gt, samples = extract_split(synth, "train", cal, "neutral", True)
        assert hist.shape[0] == tc.shape[0] == gt.shape[0] == len(samples) == 6
        np.testing.assert_allclose(np.linalg.norm(gt, axis=1), 1.0, atol=1e-9)

    def test_parallel_matches_serial(self, synth):
        cal = calibrate(synth, bins=8, config=FeatureConfig.parse("none"))
        h1, t1, g1, _ = extract_split(synth, "train", cal, "neutral", True, parallel=False)
        h2, t2, g2, _ = extract_split(synth, "train", cal, "neutral", True, parallel=True)
        np.testing.assert_array_equal(h1, h2)
        np.testing.assert_array_equal(t1, t2)

    def test_masking_changes_masked_sample_features(self, synth):
        cal = calibrate(synth, bins=8, config=FeatureConfig.parse("none"))
        masked_samples = [s for s in synth.samples if s.mask is not None]
        assert masked_samples, "fixture should contain masked samples"
        s = masked_samples[0]
        with_mask, _ = sample_features(synth, s, cal, masking=True)
        without, _ = sample_features(synth, s, cal, masking=False)
        assert not np.array_equal(with_mask[:, :, 0], without[:, :, 0])

    def test_ground_truth_selector(self, synth):
        s = synth.samples[0]
        assert ground_truth(s, "neutral") == s.gt_neutral
        assert ground_truth(s, "preference") == s.gt_preference

    def test_missing_preference_raises(self, synth):
        from dataclasses import replace

        s = replace(synth.samples[0], gt_preference=None)
        with pytest.raises(ManifestError):
            ground_truth(s, "preference")

    def test_empty_split_returns_empty_arrays(self, synth):
        cal = calibrate(synth, bins=8, config=FeatureConfig.parse("none"))
        hist, tc, gt, samples = extract_split(synth, "test", cal, "neutral", True)
        assert hist.shape == (0, 8, 8, 4)
        assert samples == []


class TestEvaluateManifest:
    def test_gray_world_stats_match_flat_recomputation(self, synth):
        from awbe.pipeline import evaluate_manifest
        from oracles import error_stats_bruteforce

        stats, report = evaluate_manifest(synth, "train", "gw", masking=True)
        recomputed = error_stats_bruteforce([r["error_deg"] for r in report])
        for field, value in recomputed.items():
            assert getattr(stats, field) == pytest.approx(value, abs=1e-9)

    def test_masking_noop_without_masks(self, tmp_path):
        from awbe.pipeline import evaluate_manifest

        cfg = SynthConfig(width=24, height=20, mask_fraction=0.0)
        clean = synthesize(77, 4, cfg, tmp_path / "nomask")
        on_stats, on_report = evaluate_manifest(clean, "train", "gw", masking=True)
        off_stats, off_report = evaluate_manifest(clean, "train", "gw", masking=False)
        assert on_stats == off_stats
        assert [r["error_deg"] for r in on_report] == [r["error_deg"] for r in off_report]

    def test_masking_matters_for_masked_samples(self, synth):
        from awbe.pipeline import evaluate_manifest

        on_stats, _ = evaluate_manifest(synth, "train", "gw", masking=True)
        off_stats, _ = evaluate_manifest(synth, "train", "gw", masking=False)
        assert on_stats != off_stats

    def test_model_method_needs_support(self, synth):
        from awbe.errors import InvalidArgumentError
        from awbe.pipeline import evaluate_manifest

        with pytest.raises(InvalidArgumentError):
            evaluate_manifest(synth, "train", "model")


class TestWorkerCount:
    def test_env_cap(self, monkeypatch):
        from awbe.pipeline import worker_count

        monkeypatch.setenv("AWBE_THREADS", "1")
        assert worker_count() == 1
        monkeypatch.setenv("AWBE_THREADS", "not-a-number")
        assert worker_count() >= 1
