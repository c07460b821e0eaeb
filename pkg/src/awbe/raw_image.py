"""Linear raw images and their per-pixel operations.

Images are 3-channel linear-light arrays in [0, 1], loaded from 16-bit
RGB PNGs. This module owns white-balance application, the 8-neighbor
edge map, noise statistics against a denoised reference, and the
sliding-window SNR statistics (integral-image accelerated).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import (
    DegenerateIlluminantError,
    DimensionMismatchError,
    ImageBitDepthError,
    ImageChannelError,
    ImageFileMissingError,
    ImageTooSmallError,
    InvalidArgumentError,
)

SNR_WINDOW = 15
SNR_EPS = 1e-6
SNR_FLOOR_DB = -100.0


@dataclass(frozen=True)
class RawImage:
    """A linear 3-channel image with values in [0, 1], shape (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3:
            raise ImageChannelError(f"expected (H, W, 3) array, got shape {d.shape}")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise InvalidArgumentError("image must contain at least one pixel")
        if not np.all(np.isfinite(d)):
            raise InvalidArgumentError("image contains non-finite values")
        if d.min() < 0.0 or d.max() > 1.0:
            raise InvalidArgumentError("image values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True, eq=False)
class Illuminant:
    """Unit-norm, non-negative RGB direction of the scene light."""

    rgb: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, Illuminant):
            return NotImplemented
        return bool(np.array_equal(self.rgb, other.rgb))

    def __post_init__(self) -> None:
        v = np.asarray(self.rgb, dtype=np.float64)
        object.__setattr__(self, "rgb", v)
        if v.shape != (3,):
            raise InvalidArgumentError("illuminant needs exactly 3 components")
        if not np.all(np.isfinite(v)) or np.any(v < 0.0):
            raise InvalidArgumentError("illuminant components must be finite and >= 0")
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-6:
            raise InvalidArgumentError("illuminant must be unit L2 norm")

    @classmethod
    def from_rgb(cls, rgb) -> "Illuminant":
        """Normalize an arbitrary non-negative RGB triple to unit norm."""
        v = np.asarray(rgb, dtype=np.float64)
        n = float(np.linalg.norm(v))
        if not np.isfinite(n) or n <= 0.0:
            raise InvalidArgumentError("cannot normalize a zero or non-finite vector")
        return cls(rgb=v / n)

    @classmethod
    def neutral(cls) -> "Illuminant":
        return cls.from_rgb((1.0, 1.0, 1.0))


@dataclass(frozen=True)
class NoiseStats:
    """Per-channel mean then std of |noisy - denoised|: (mr, mg, mb, sr, sg, sb)."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != 6:
            raise InvalidArgumentError("noise stats has 6 entries")
        if any(not math.isfinite(v) or v < 0.0 for v in self.values):
            raise InvalidArgumentError("noise stats must be finite and >= 0")


@dataclass(frozen=True)
class SnrStats:
    """Six summary stats of the SNR map: mean, std, min, max, p25, p75 (dB)."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) != 6:
            raise InvalidArgumentError("SNR stats has 6 entries")
        if any(not math.isfinite(v) for v in self.values):
            raise InvalidArgumentError("SNR stats must be finite")


def load_raw(path: str | os.PathLike) -> RawImage:
    """Load a 16-bit 3-channel PNG and scale it into [0, 1]."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageFileMissingError(f"no such image file: {path}")
    arr = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise ImageBitDepthError(f"could not decode image: {path}")
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageChannelError(
            f"{path}: expected 3 channels, got shape {arr.shape}"
        )
    if arr.dtype != np.uint16:
        raise ImageBitDepthError(f"{path}: expected 16-bit samples, got {arr.dtype}")
    rgb = arr[:, :, ::-1].astype(np.float64) / 65535.0
    return RawImage(data=rgb)


def save_raw(img: RawImage, path: str | os.PathLike) -> None:
    """Write a RawImage as a 16-bit RGB PNG."""
    arr = np.round(img.data * 65535.0).astype(np.uint16)
    if not cv2.imwrite(os.fspath(path), arr[:, :, ::-1]):
        raise InvalidArgumentError(f"could not write image: {path}")


def load_mask(path: str | os.PathLike) -> np.ndarray:
    """Load an 8-bit grayscale PNG mask; nonzero marks included pixels."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageFileMissingError(f"no such mask file: {path}")
    arr = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if arr is None:
        raise ImageBitDepthError(f"could not decode mask: {path}")
    if arr.ndim != 2:
        raise ImageChannelError(f"{path}: mask must be single-channel, got shape {arr.shape}")
    return arr


def save_mask(mask: np.ndarray, path: str | os.PathLike) -> None:
    """Write an 8-bit grayscale PNG mask."""
    if not cv2.imwrite(os.fspath(path), mask.astype(np.uint8)):
        raise InvalidArgumentError(f"could not write mask: {path}")


def apply_white_balance(img: RawImage, ill: Illuminant) -> RawImage:
    """Divide out the illuminant, anchored so the green channel is unchanged.

    Gains are green / (r, g, b); output is clipped to [0, 1].
    """
    if np.any(ill.rgb <= 1e-6):
        raise DegenerateIlluminantError(f"illuminant {ill.rgb} has a near-zero component")
    gains = ill.rgb[1] / ill.rgb
    out = img.data * gains
    return RawImage(data=np.clip(out, 0.0, 1.0))


def edge_map(img: RawImage) -> RawImage:
    """Mean absolute difference to the 8 neighbors, replicate-padded borders."""
    if img.height < 2 or img.width < 2:
        raise ImageTooSmallError("edge map needs at least 2x2 pixels")
    padded = np.pad(img.data, ((1, 1), (1, 1), (0, 0)), mode="edge")
    h, w = img.height, img.width
    acc = np.zeros_like(img.data)
    tmp = np.empty_like(img.data)  # reused per neighbor; allocs dominate otherwise
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            shifted = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            np.subtract(img.data, shifted, out=tmp)
            np.abs(tmp, out=tmp)
            acc += tmp
    acc /= 8.0
    return RawImage(data=acc)


def noise_stats(noisy: RawImage, denoised: RawImage) -> NoiseStats:
    """Per-channel mean and population std of the absolute residual."""
    if noisy.data.shape != denoised.data.shape:
        raise DimensionMismatchError(
            f"noisy {noisy.data.shape} vs denoised {denoised.data.shape}"
        )
    resid = np.abs(noisy.data - denoised.data)
    means = resid.mean(axis=(0, 1))
    stds = resid.std(axis=(0, 1))
    return NoiseStats(values=tuple(float(v) for v in np.concatenate([means, stds])))


def snr_map(img: RawImage) -> np.ndarray:
    """Per-window SNR in dB for every 15x15 window at stride 1.

    mu is the mean and sigma the population std of all 675 RGB values in
    the window; SNR = 10*log10(mu / (sigma + 1e-6)), floored at -100 dB
    (non-positive mu maps to the floor).
    """
    w = SNR_WINDOW
    if img.height < w or img.width < w:
        raise ImageTooSmallError(f"SNR needs at least {w}x{w} pixels")
    s1 = img.data.sum(axis=2)
    s2 = (img.data ** 2).sum(axis=2)

    def window_sums(plane: np.ndarray) -> np.ndarray:
        integral = np.zeros((plane.shape[0] + 1, plane.shape[1] + 1))
        np.cumsum(plane, axis=0, out=integral[1:, 1:])
        np.cumsum(integral[1:, 1:], axis=1, out=integral[1:, 1:])
        return (
            integral[w:, w:]
            - integral[:-w, w:]
            - integral[w:, :-w]
            + integral[:-w, :-w]
        )

    count = float(w * w * 3)
    mu = window_sums(s1) / count
    var = np.maximum(window_sums(s2) / count - mu ** 2, 0.0)
    sigma = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = 10.0 * np.log10(mu / (sigma + SNR_EPS))
    snr = np.where(mu > 0.0, snr, SNR_FLOOR_DB)
    return np.maximum(snr, SNR_FLOOR_DB)


def snr_stats(img: RawImage) -> SnrStats:
    """Summary statistics (mean, std, min, max, p25, p75) of the SNR map."""
    m = snr_map(img)
    return SnrStats(
        values=(
            float(m.mean()),
            float(m.std()),
            float(m.min()),
            float(m.max()),
            float(np.percentile(m, 25)),
            float(np.percentile(m, 75)),
        )
    )
