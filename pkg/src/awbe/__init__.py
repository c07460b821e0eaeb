"""Contextual-metadata illuminant estimation toolkit.

A compact auto-white-balance estimator that fuses chromaticity/edge
histograms with solar time-of-day and capture metadata, plus the
statistical baselines and evaluation harness around it.
"""

from .baselines import BaselineConfig, estimate_baseline
from .dataset import CaptureMeta, Manifest, Sample, SynthConfig, load_manifest, synthesize, write_manifest
from .errors import AwbeError
from .evaluation import ErrorStats, error_stats, evaluate
from .features import (
    BinGrid,
    FeatureConfig,
    NormStats,
    TimeCaptureFeature,
    calibrate_bins,
    chroma_histogram,
    histogram_feature,
    time_capture_feature,
)
from .model import (
    Chromaticity,
    ModelConfig,
    ModelParams,
    backward,
    chroma_to_illuminant,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .pipeline import (
    Calibration,
    calibrate,
    evaluate_manifest,
    extract_split,
    load_calibration,
    save_calibration,
)
from .raw_image import (
    Illuminant,
    NoiseStats,
    RawImage,
    SnrStats,
    apply_white_balance,
    edge_map,
    load_raw,
    noise_stats,
    snr_stats,
)
from .solar import GeoTime, SolarEvents, TimeFeature, solar_events, time_feature
from .training import OptimizerState, TrainConfig, adam_step, angular_error, lr_at, train

__version__ = "0.1.0"

__all__ = [
    "AwbeError",
    "BaselineConfig",
    "BinGrid",
    "Calibration",
    "CaptureMeta",
    "Chromaticity",
    "ErrorStats",
    "FeatureConfig",
    "GeoTime",
    "Illuminant",
    "Manifest",
    "ModelConfig",
    "ModelParams",
    "NoiseStats",
    "NormStats",
    "OptimizerState",
    "RawImage",
    "Sample",
    "SnrStats",
    "SolarEvents",
    "SynthConfig",
    "TimeCaptureFeature",
    "TimeFeature",
    "TrainConfig",
    "adam_step",
    "angular_error",
    "apply_white_balance",
    "backward",
    "calibrate",
    "calibrate_bins",
    "chroma_histogram",
    "chroma_to_illuminant",
    "edge_map",
    "error_stats",
    "estimate_baseline",
    "evaluate",
    "evaluate_manifest",
    "extract_split",
    "forward",
    "histogram_feature",
    "init_params",
    "load_calibration",
    "load_checkpoint",
    "load_manifest",
    "load_raw",
    "lr_at",
    "noise_stats",
    "save_calibration",
    "save_checkpoint",
    "snr_stats",
    "solar_events",
    "synthesize",
    "time_capture_feature",
    "time_feature",
    "train",
    "write_manifest",
]
