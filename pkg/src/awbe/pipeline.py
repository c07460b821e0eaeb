"""Wiring between the dataset, feature extraction, and the model.

Calibration (histogram bin edges + capture-vector normalization) is
fitted on the training split and stored as one JSON file; feature
extraction for any sample then needs only that file.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Manifest, Sample
from .errors import CalibrationError, InvalidArgumentError, ManifestError
from .features import (
    BinGrid,
    FeatureConfig,
    NormStats,
    assemble_raw_vector,
    calibrate_bins,
    fit_norm_stats,
    histogram_feature,
    time_capture_feature,
)
from .model import ModelParams, forward
from .raw_image import Illuminant, NoiseStats, RawImage, SnrStats, load_mask, load_raw, noise_stats, snr_stats
from .solar import solar_events, time_feature
from .training import predicted_illuminants


@dataclass(frozen=True)
class Calibration:
    """Everything feature extraction needs beyond the sample itself."""

    grid: BinGrid
    norm: NormStats
    config: FeatureConfig


def save_calibration(cal: Calibration, path: str | os.PathLike) -> None:
    doc = {
        "h": cal.grid.bins,
        "u_edges": [float(v) for v in cal.grid.u_edges],
        "v_edges": [float(v) for v in cal.grid.v_edges],
        "feature_config": cal.config.name(),
        "min": [float(v) for v in cal.norm.mins],
        "max": [float(v) for v in cal.norm.maxs],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_calibration(path: str | os.PathLike) -> Calibration:
    path = Path(path)
    if not path.is_file():
        raise CalibrationError(f"no such calibration file: {path}")
    try:
        doc = json.loads(path.read_text())
        grid = BinGrid(
            bins=int(doc["h"]),
            u_edges=np.asarray(doc["u_edges"], dtype=np.float64),
            v_edges=np.asarray(doc["v_edges"], dtype=np.float64),
        )
        config = FeatureConfig.parse(doc["feature_config"])
        norm = NormStats(
            mins=np.asarray(doc["min"], dtype=np.float64),
            maxs=np.asarray(doc["max"], dtype=np.float64),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CalibrationError(f"{path}: malformed calibration file ({exc})") from exc
    if norm.mins.shape[0] != config.dim:
        raise CalibrationError(
            f"{path}: normalization has {norm.mins.shape[0]} dims but "
            f"feature config {config.name()!r} needs {config.dim}"
        )
    return Calibration(grid=grid, norm=norm, config=config)


def _load_sample_arrays(
    manifest: Manifest, sample: Sample, masking: bool
) -> tuple[RawImage, RawImage | None, np.ndarray | None]:
    img = load_raw(manifest.resolve(sample.raw))
    denoised = load_raw(manifest.resolve(sample.denoised)) if sample.denoised else None
    mask = None
    if masking and sample.mask:
        mask = load_mask(manifest.resolve(sample.mask))
    return img, denoised, mask


def _capture_blocks(
    img: RawImage, denoised: RawImage | None, sample: Sample, config: FeatureConfig
) -> tuple[NoiseStats | None, SnrStats | None]:
    noise = None
    if config.use_noise:
        if denoised is None:
            raise ManifestError(
                f"sample {sample.id!r}: feature config needs noise stats but no denoised image is listed"
            )
        noise = noise_stats(img, denoised)
    snr = snr_stats(img) if config.use_snr else None
    return noise, snr


def raw_capture_vector(
    manifest: Manifest, sample: Sample, config: FeatureConfig, masking: bool
) -> np.ndarray:
    """Unnormalized capture vector for one sample (used when fitting norms)."""
    img, denoised, _ = _load_sample_arrays(manifest, sample, masking)
    geo = sample.meta.geo_time()
    tf = time_feature(geo, solar_events(geo))
    noise, snr = _capture_blocks(img, denoised, sample, config)
    return assemble_raw_vector(
        tf, sample.meta.iso, sample.meta.shutter_s, sample.meta.flash, noise, snr, config
    )


def calibrate(
    manifest: Manifest,
    bins: int,
    config: FeatureConfig,
    masking: bool = True,
    split: str = "train",
) -> Calibration:
    """Fit histogram bin edges and capture-vector normalization on a split."""
    samples = manifest.split_samples(split)
    if not samples:
        raise CalibrationError(f"manifest has no {split!r} samples to calibrate on")
    images = []
    masks = []
    for s in samples:
        img, _, mask = _load_sample_arrays(manifest, s, masking)
        images.append(img)
        masks.append(mask)
    grid = calibrate_bins(images, bins, masks)
    vectors = np.stack(
        [raw_capture_vector(manifest, s, config, masking) for s in samples]
    )
    return Calibration(grid=grid, norm=fit_norm_stats(vectors), config=config)


def sample_features(
    manifest: Manifest, sample: Sample, cal: Calibration, masking: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """(histogram feature, normalized capture vector) for one sample."""
    img, denoised, mask = _load_sample_arrays(manifest, sample, masking)
    hist = histogram_feature(img, mask, cal.grid)
    geo = sample.meta.geo_time()
    tf = time_feature(geo, solar_events(geo))
    noise, snr = _capture_blocks(img, denoised, sample, cal.config)
    tc = time_capture_feature(
        tf, sample.meta.iso, sample.meta.shutter_s, sample.meta.flash,
        noise, snr, cal.norm, cal.config,
    )
    return hist, tc.normalized


def ground_truth(sample: Sample, gt: str) -> Illuminant:
    if gt == "neutral":
        return sample.gt_neutral
    if gt == "preference":
        if sample.gt_preference is None:
            raise ManifestError(f"sample {sample.id!r} has no user-preference ground truth")
        return sample.gt_preference
    raise InvalidArgumentError(f"ground truth must be 'neutral' or 'preference', got {gt!r}")


def worker_count() -> int:
    """Worker pool size, capped by the AWBE_THREADS environment variable."""
    try:
        cap = int(os.environ.get("AWBE_THREADS", "0"))
    except ValueError:
        cap = 0
    cpus = os.cpu_count() or 1
    return max(1, min(cap, cpus)) if cap > 0 else min(4, cpus)


def extract_split(
    manifest: Manifest,
    split: str,
    cal: Calibration,
    gt: str = "neutral",
    masking: bool = True,
    parallel: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[Sample]]:
    """Feature arrays (hist, capture, gt) for every sample of a split."""
    samples = manifest.split_samples(split)
    if not samples:
        empty_hist = np.zeros((0, cal.grid.bins, cal.grid.bins, 4))
        return empty_hist, np.zeros((0, cal.config.dim)), np.zeros((0, 3)), []

    def one(s: Sample):
        return sample_features(manifest, s, cal, masking)

    if parallel and len(samples) > 1:
        with ThreadPoolExecutor(max_workers=worker_count()) as pool:
            feats = list(pool.map(one, samples))
    else:
        feats = [one(s) for s in samples]
    hist = np.stack([f[0] for f in feats])
    tc = np.stack([f[1] for f in feats])
    gts = np.stack([ground_truth(s, gt).rgb for s in samples])
    return hist, tc, gts, samples


def model_illuminant(params: ModelParams, hist: np.ndarray, tc: np.ndarray) -> Illuminant:
    """Eval-mode prediction for one sample's precomputed features."""
    chroma, _ = forward(params, hist, tc, mode="eval")
    rgb = predicted_illuminants(chroma)[0]
    return Illuminant(rgb=rgb)


def evaluate_manifest(
    manifest: Manifest,
    split: str,
    method: str,
    gt: str = "neutral",
    masking: bool = True,
    params: ModelParams | None = None,
    cal: Calibration | None = None,
):
    """Run one estimator over a split and aggregate its angular errors.

    ``method`` is a statistical baseline name or "model" (which needs
    ``params`` and ``cal``). The multi-illuminant mask, when enabled,
    applies to feature extraction only. Returns (ErrorStats, report).
    """
    from .baselines import BaselineConfig, estimate_baseline
    from .evaluation import error_stats
    from .training import angular_error

    samples = manifest.split_samples(split)
    if not samples:
        raise InvalidArgumentError(f"manifest has no {split!r} samples")

    if method == "model":
        if params is None or cal is None:
            raise InvalidArgumentError("model evaluation needs params and a calibration")
        hist, tc, _, samples = extract_split(manifest, split, cal, gt, masking, parallel=True)
        preds = [model_illuminant(params, hist[i], tc[i]) for i in range(len(samples))]
    else:
        cfg = BaselineConfig.preset(method)

        def one(s: Sample) -> Illuminant:
            img = load_raw(manifest.resolve(s.raw))
            mask = load_mask(manifest.resolve(s.mask)) if masking and s.mask else None
            return estimate_baseline(img, mask, cfg)

        if len(samples) > 1:
            with ThreadPoolExecutor(max_workers=worker_count()) as pool:
                preds = list(pool.map(one, samples))
        else:
            preds = [one(samples[0])]

    report = []
    errors = []
    for s, pred in zip(samples, preds):
        err = angular_error(pred.rgb, ground_truth(s, gt).rgb)
        errors.append(err)
        report.append({"id": s.id, "error_deg": err, "prediction": [float(v) for v in pred.rgb]})
    return error_stats(errors), report
