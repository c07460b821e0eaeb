"""Model input features: chromaticity histograms and the capture vector.

The histogram feature is an h x h x 4 tensor: square-rooted unit-sum
chromaticity histogram of the image, the same for its edge map, and two
coordinate channels holding the bin-center chromaticities rescaled to
[0, 1]. Bins live in R/G x B/G space with edges calibrated from the
10th/95th percentiles of the training chromaticities.

The time-capture vector concatenates the 12-dim solar time feature,
log ISO, log shutter, the flash flag, and optionally the 6 noise stats
and/or 6 SNR stats, then min-max normalizes each dimension against
training-set statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import CalibrationError, InvalidArgumentError, ShapeError
from .raw_image import NoiseStats, RawImage, SnrStats, edge_map
from .solar import TimeFeature

# Pixels only count toward chromaticity statistics when the green
# channel is usable and no channel is close to sensor saturation.
CHROMA_GREEN_MIN = 1e-6
SATURATION_MAX = 0.98

MIN_PERCENTILE_SPAN = 0.01
PERCENTILE_LO = 10.0
PERCENTILE_HI = 95.0

BASE_FEATURE_DIM = 15  # 12 time dims + log ISO + log shutter + flash


@dataclass(frozen=True)
class FeatureConfig:
    """Which optional capture blocks feed the model."""

    use_noise: bool = False
    use_snr: bool = False

    @classmethod
    def parse(cls, spec: str) -> "FeatureConfig":
        table = {
            "none": cls(False, False),
            "n": cls(True, False),
            "r": cls(False, True),
            "nr": cls(True, True),
        }
        if spec not in table:
            raise InvalidArgumentError(f"feature config must be one of {sorted(table)}, got {spec!r}")
        return table[spec]

    def name(self) -> str:
        return {
            (False, False): "none",
            (True, False): "n",
            (False, True): "r",
            (True, True): "nr",
        }[(self.use_noise, self.use_snr)]

    @property
    def dim(self) -> int:
        return BASE_FEATURE_DIM + 6 * self.use_noise + 6 * self.use_snr


@dataclass(frozen=True)
class BinGrid:
    """Histogram bin edges over R/G (u) and B/G (v) chromaticity."""

    bins: int
    u_edges: np.ndarray
    v_edges: np.ndarray

    def __post_init__(self) -> None:
        u = np.asarray(self.u_edges, dtype=np.float64)
        v = np.asarray(self.v_edges, dtype=np.float64)
        object.__setattr__(self, "u_edges", u)
        object.__setattr__(self, "v_edges", v)
        if self.bins < 2:
            raise InvalidArgumentError("bin count must be >= 2")
        for name, edges in (("u", u), ("v", v)):
            if edges.shape != (self.bins + 1,):
                raise InvalidArgumentError(f"{name}_edges must have {self.bins + 1} entries")
            if not np.all(np.diff(edges) > 0):
                raise InvalidArgumentError(f"{name}_edges must be strictly ascending")


@dataclass(frozen=True)
class NormStats:
    """Per-dimension min/max over the training set for min-max scaling."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self) -> None:
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)
        if mins.shape != maxs.shape or mins.ndim != 1:
            raise InvalidArgumentError("min/max must be 1-D and the same length")
        if np.any(maxs < mins):
            raise InvalidArgumentError("per-dimension max must be >= min")


@dataclass(frozen=True)
class TimeCaptureFeature:
    """Raw and min-max-normalized capture vector plus its block layout."""

    raw: np.ndarray
    normalized: np.ndarray
    config: FeatureConfig


def _valid_chroma(data: np.ndarray, mask: np.ndarray | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(rg, bg, weight) arrays for pixels passing the validity rule."""
    r = data[:, :, 0]
    g = data[:, :, 1]
    b = data[:, :, 2]
    valid = (g > CHROMA_GREEN_MIN) & (data.max(axis=2) < SATURATION_MAX)
    if mask is not None:
        if mask.shape != data.shape[:2]:
            raise ShapeError(f"mask shape {mask.shape} does not match image {data.shape[:2]}")
        valid &= mask != 0
    rv = r[valid]
    gv = g[valid]
    bv = b[valid]
    weight = np.sqrt(rv * rv + gv * gv + bv * bv)
    return rv / gv, bv / gv, weight


def calibrate_bins(
    training_images: Iterable[RawImage],
    bins: int,
    masks: Sequence[np.ndarray | None] | None = None,
) -> BinGrid:
    """Fit bin edges to the pooled training chromaticities.

    Outer edges sit at the 10th and 95th percentiles per axis, split
    into equal-width bins; a degenerate span is widened to 0.01 so the
    edges stay strictly ascending.
    """
    if bins < 2:
        raise InvalidArgumentError("bin count must be >= 2")
    rg_all: list[np.ndarray] = []
    bg_all: list[np.ndarray] = []
    for i, img in enumerate(training_images):
        mask = masks[i] if masks is not None else None
        rg, bg, _ = _valid_chroma(img.data, mask)
        if rg.size:
            rg_all.append(rg)
            bg_all.append(bg)
    if not rg_all:
        raise CalibrationError("no valid pixels to calibrate histogram bins from")
    edges = []
    for vals in (np.concatenate(rg_all), np.concatenate(bg_all)):
        lo, hi = np.percentile(vals, [PERCENTILE_LO, PERCENTILE_HI])
        if hi - lo < MIN_PERCENTILE_SPAN:
            mid = 0.5 * (lo + hi)
            lo = mid - MIN_PERCENTILE_SPAN / 2
            hi = mid + MIN_PERCENTILE_SPAN / 2
        edges.append(np.linspace(lo, hi, bins + 1))
    return BinGrid(bins=bins, u_edges=edges[0], v_edges=edges[1])


def chroma_histogram_raw(
    img: RawImage, mask: np.ndarray | None, grid: BinGrid
) -> np.ndarray:
    """Unnormalized histogram: summed pixel intensities per (u, v) bin.

    Bin intervals are half-open on the right; out-of-range chromaticity
    is clamped into the outermost bins.
    """
    rg, bg, weight = _valid_chroma(img.data, mask)
    if rg.size == 0:
        return np.zeros((grid.bins, grid.bins))
    mi = np.clip(np.searchsorted(grid.u_edges, rg, side="right") - 1, 0, grid.bins - 1)
    ni = np.clip(np.searchsorted(grid.v_edges, bg, side="right") - 1, 0, grid.bins - 1)
    flat = np.bincount(mi * grid.bins + ni, weights=weight, minlength=grid.bins * grid.bins)
    return flat.reshape(grid.bins, grid.bins)


def chroma_histogram(
    img: RawImage, mask: np.ndarray | None, grid: BinGrid
) -> np.ndarray:
    """Unit-sum-normalized, square-rooted chromaticity histogram."""
    hist = chroma_histogram_raw(img, mask, grid)
    total = hist.sum()
    if total > 0:
        hist /= total
    return np.sqrt(hist)


def _coordinate_channels(grid: BinGrid) -> tuple[np.ndarray, np.ndarray]:
    """Bin-center u and v maps, each rescaled to [0, 1]."""

    def rescaled_centers(edges: np.ndarray) -> np.ndarray:
        centers = 0.5 * (edges[:-1] + edges[1:])
        span = centers[-1] - centers[0]
        return (centers - centers[0]) / span

    u = rescaled_centers(grid.u_edges)
    v = rescaled_centers(grid.v_edges)
    u_map = np.repeat(u[:, None], grid.bins, axis=1)
    v_map = np.repeat(v[None, :], grid.bins, axis=0)
    return u_map, v_map


def histogram_feature(
    img: RawImage, mask: np.ndarray | None, grid: BinGrid
) -> np.ndarray:
    """The h x h x 4 model input: color hist, edge hist, u map, v map."""
    color = chroma_histogram(img, mask, grid)
    edges = chroma_histogram(edge_map(img), mask, grid)
    u_map, v_map = _coordinate_channels(grid)
    return np.stack([color, edges, u_map, v_map], axis=2)


def assemble_raw_vector(
    tf: TimeFeature,
    iso: float,
    shutter_s: float,
    flash: bool,
    noise: NoiseStats | None,
    snr: SnrStats | None,
    config: FeatureConfig,
) -> np.ndarray:
    """Concatenate [time feature, log ISO, log shutter, flash, noise?, snr?]."""
    if iso <= 0 or shutter_s <= 0:
        raise InvalidArgumentError("ISO and shutter must be positive")
    parts: list[float] = tf.flatten()
    parts += [math.log(iso), math.log(shutter_s), 1.0 if flash else 0.0]
    if config.use_noise:
        if noise is None:
            raise InvalidArgumentError("feature config includes noise stats but none were given")
        parts += list(noise.values)
    if config.use_snr:
        if snr is None:
            raise InvalidArgumentError("feature config includes SNR stats but none were given")
        parts += list(snr.values)
    return np.asarray(parts, dtype=np.float64)


def fit_norm_stats(raw_vectors: np.ndarray) -> NormStats:
    """Per-dimension min/max over a (N, d) matrix of raw capture vectors."""
    m = np.asarray(raw_vectors, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1:
        raise CalibrationError("need at least one raw vector to fit normalization")
    return NormStats(mins=m.min(axis=0), maxs=m.max(axis=0))


def minmax_normalize(raw: np.ndarray, norm: NormStats) -> np.ndarray:
    """(x - min) / (max - min) per dimension; constant dimensions map to 0."""
    if raw.shape != norm.mins.shape:
        raise ShapeError(
            f"capture vector has {raw.shape[0]} dims but normalization has {norm.mins.shape[0]}"
        )
    span = norm.maxs - norm.mins
    out = np.zeros_like(raw)
    nz = span > 0
    out[nz] = (raw[nz] - norm.mins[nz]) / span[nz]
    return out


def time_capture_feature(
    tf: TimeFeature,
    iso: float,
    shutter_s: float,
    flash: bool,
    noise: NoiseStats | None,
    snr: SnrStats | None,
    norm: NormStats,
    config: FeatureConfig,
) -> TimeCaptureFeature:
    """Assemble and min-max normalize the full capture vector."""
    raw = assemble_raw_vector(tf, iso, shutter_s, flash, noise, snr, config)
    if raw.shape[0] != config.dim:
        raise ShapeError(f"assembled {raw.shape[0]} dims, config expects {config.dim}")
    return TimeCaptureFeature(raw=raw, normalized=minmax_normalize(raw, norm), config=config)
