"""Dataset manifest ingestion and the synthetic scene generator.

The manifest is a JSON file describing raw/denoised/mask files, capture
metadata, dual ground truths, and the train/val/test split. Paths are
stored relative to the manifest's directory.

The generator renders piecewise-constant reflectance scenes under a
sampled illuminant whose correlated color temperature is tied to the
capture time of day for outdoor scenes; indoor scenes get artificial
CCTs, high ISO, and occasional flash. Ground truth is the applied
illuminant direction, exactly.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ImageFileMissingError, InvalidArgumentError, ManifestError
from .raw_image import Illuminant, RawImage, save_mask, save_raw
from .solar import GeoTime, solar_events, utc_offset_from_longitude

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class CaptureMeta:
    """Capture metadata attached to one sample."""

    utc: float
    utc_offset_s: float
    lat: float
    lon: float
    iso: float
    shutter_s: float
    flash: bool

    def geo_time(self) -> GeoTime:
        return GeoTime(
            latitude=self.lat,
            longitude=self.lon,
            utc_timestamp=self.utc,
            utc_offset=self.utc_offset_s,
        )


@dataclass(frozen=True)
class Sample:
    """One dataset record; file paths are manifest-relative strings."""

    id: str
    raw: str
    meta: CaptureMeta
    gt_neutral: Illuminant
    split: str
    denoised: str | None = None
    mask: str | None = None
    gt_preference: Illuminant | None = None


@dataclass(frozen=True)
class Manifest:
    """A validated dataset description."""

    camera: str
    samples: tuple[Sample, ...]
    base_dir: Path = field(compare=False, default=Path("."))

    def split_samples(self, split: str) -> list[Sample]:
        if split not in SPLITS:
            raise InvalidArgumentError(f"split must be one of {SPLITS}, got {split!r}")
        return [s for s in self.samples if s.split == split]

    def resolve(self, rel: str) -> Path:
        return self.base_dir / rel


def _parse_illuminant(raw, label: str) -> Illuminant:
    if not isinstance(raw, list) or len(raw) != 3:
        raise ManifestError(f"{label}: must be a list of 3 numbers")
    v = np.asarray([float(x) for x in raw], dtype=np.float64)
    deviation = abs(float(np.linalg.norm(v)) - 1.0)
    if deviation > 1e-4:
        raise ManifestError(f"{label}: ground truth {raw} is not unit-norm")
    if deviation > 1e-12:
        # Renormalize sloppy inputs, but leave already-unit vectors
        # untouched so write -> load -> write is byte-stable.
        v = v / np.linalg.norm(v)
    return Illuminant(rgb=v)


def _require(d: dict, key: str, label: str):
    if key not in d:
        raise ManifestError(f"{label}: missing required field {key!r}")
    return d[key]


def load_manifest(path: str | os.PathLike) -> Manifest:
    """Load and eagerly validate a manifest JSON file."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"no such manifest: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: manifest must be a JSON object")
    version = _require(doc, "version", str(path))
    if version != MANIFEST_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {version}")
    camera = _require(doc, "camera", str(path))
    raw_samples = _require(doc, "samples", str(path))
    if not isinstance(raw_samples, list):
        raise ManifestError(f"{path}: samples must be a list")

    base_dir = path.parent
    samples = []
    seen_ids: set[str] = set()
    for i, rec in enumerate(raw_samples):
        label = f"{path}: samples[{i}]"
        sample_id = str(_require(rec, "id", label))
        if sample_id in seen_ids:
            raise ManifestError(f"{label}: duplicate id {sample_id!r}")
        seen_ids.add(sample_id)

        split = _require(rec, "split", label)
        if split not in SPLITS:
            raise ManifestError(f"{label}: split must be one of {SPLITS}, got {split!r}")

        meta_rec = _require(rec, "meta", label)
        lon = float(_require(meta_rec, "lon", f"{label}.meta"))
        offset = meta_rec.get("utc_offset_s")
        meta = CaptureMeta(
            utc=float(_require(meta_rec, "utc", f"{label}.meta")),
            utc_offset_s=float(offset) if offset is not None else utc_offset_from_longitude(lon),
            lat=float(_require(meta_rec, "lat", f"{label}.meta")),
            lon=lon,
            iso=float(_require(meta_rec, "iso", f"{label}.meta")),
            shutter_s=float(_require(meta_rec, "shutter_s", f"{label}.meta")),
            flash=bool(_require(meta_rec, "flash", f"{label}.meta")),
        )
        if meta.iso <= 0 or meta.shutter_s <= 0:
            raise ManifestError(f"{label}: iso and shutter_s must be positive")

        sample = Sample(
            id=sample_id,
            raw=str(_require(rec, "raw", label)),
            denoised=rec.get("denoised"),
            mask=rec.get("mask"),
            meta=meta,
            gt_neutral=_parse_illuminant(_require(rec, "gt_neutral", label), f"{label}.gt_neutral"),
            gt_preference=(
                _parse_illuminant(rec["gt_preference"], f"{label}.gt_preference")
                if rec.get("gt_preference") is not None
                else None
            ),
            split=split,
        )
        for rel in (sample.raw, sample.denoised, sample.mask):
            if rel is not None and not (base_dir / rel).is_file():
                raise ImageFileMissingError(f"{label}: referenced file missing: {base_dir / rel}")
        samples.append(sample)
    return Manifest(camera=str(camera), samples=tuple(samples), base_dir=base_dir)


def write_manifest(manifest: Manifest, path: str | os.PathLike) -> None:
    """Serialize a manifest back to its JSON schema."""
    recs = []
    for s in manifest.samples:
        rec: dict = {
            "id": s.id,
            "raw": s.raw,
        }
        if s.denoised is not None:
            rec["denoised"] = s.denoised
        if s.mask is not None:
            rec["mask"] = s.mask
        rec["meta"] = {
            "utc": s.meta.utc,
            "utc_offset_s": s.meta.utc_offset_s,
            "lat": s.meta.lat,
            "lon": s.meta.lon,
            "iso": s.meta.iso,
            "shutter_s": s.meta.shutter_s,
            "flash": s.meta.flash,
        }
        rec["gt_neutral"] = [float(v) for v in s.gt_neutral.rgb]
        if s.gt_preference is not None:
            rec["gt_preference"] = [float(v) for v in s.gt_preference.rgb]
        rec["split"] = s.split
        recs.append(rec)
    doc = {"version": MANIFEST_VERSION, "camera": manifest.camera, "samples": recs}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


# --- synthetic scenes ------------------------------------------------------

# Blackbody radiance integrated against Gaussian camera sensitivities
# gives a smooth, monotone warm-to-cool locus in the synthetic camera's
# RGB space. Wavelengths in nanometers.
_LAMBDA_NM = np.linspace(380.0, 720.0, 200)
_SENSITIVITIES = np.stack(
    [
        np.exp(-0.5 * ((_LAMBDA_NM - center) / width) ** 2)
        for center, width in ((600.0, 35.0), (540.0, 35.0), (465.0, 30.0))
    ]
)
_HC_OVER_K_NM = 1.43877688e7  # h*c/k in nm*K


def cct_to_illuminant(cct: float) -> Illuminant:
    """Camera-space illuminant color of a blackbody at the given temperature."""
    t = float(np.clip(cct, 1500.0, 25000.0))
    radiance = 1.0 / (_LAMBDA_NM ** 5 * np.expm1(_HC_OVER_K_NM / (_LAMBDA_NM * t)))
    rgb = _SENSITIVITIES @ radiance
    return Illuminant.from_rgb(rgb)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the synthetic scene generator."""

    width: int = 64
    height: int = 48
    patch_grid: tuple[int, int] = (4, 4)
    outdoor_fraction: float = 0.7
    noise_base_sigma: float = 0.0  # at ISO 6400; scales linearly with ISO
    off_locus_sigma: float = 0.03
    reflectance_chroma_sigma: float = 0.25
    reflectance_tint_sigma: float = 0.0  # global cast the histogram cannot resolve
    gray_world_exact: bool = False
    mask_fraction: float = 0.0
    cct_day: float = 6500.0
    cct_horizon: float = 2600.0
    cct_ramp_s: float = 7200.0
    cct_jitter: float = 150.0
    split_fractions: tuple[float, float, float] = (1.0, 0.0, 0.0)
    write_denoised: bool = True

    def __post_init__(self) -> None:
        if self.width < 2 or self.height < 2:
            raise InvalidArgumentError("scene must be at least 2x2")
        if self.patch_grid[0] * self.patch_grid[1] < 8:
            raise InvalidArgumentError("need at least 8 reflectance patches")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise InvalidArgumentError("split fractions must sum to 1")


# A few plausible capture places (lat, lon) for metadata sampling.
_PLACES = (
    (40.7128, -74.0060),
    (51.5074, -0.1278),
    (35.6762, 139.6503),
    (-33.8688, 151.2093),
    (19.4326, -99.1332),
    (-1.2921, 36.8219),
    (48.8566, 2.3522),
    (37.7749, -122.4194),
)


def _sample_reflectance(rng: np.random.Generator, config: SynthConfig) -> np.ndarray:
    """Piecewise-constant reflectance image with distinct patch chromaticities."""
    rows, cols = config.patch_grid
    gray = rng.uniform(0.15, 0.7, size=(rows, cols))
    chroma = np.exp(rng.normal(0.0, config.reflectance_chroma_sigma, size=(rows, cols, 2)))
    patch = np.stack([gray * chroma[:, :, 0], gray, gray * chroma[:, :, 1]], axis=2)
    if config.reflectance_tint_sigma > 0:
        tint = np.exp(rng.normal(0.0, config.reflectance_tint_sigma, size=2))
        patch[:, :, 0] *= tint[0]
        patch[:, :, 2] *= tint[1]
    img = np.repeat(
        np.repeat(patch, math.ceil(config.height / rows), axis=0),
        math.ceil(config.width / cols),
        axis=1,
    )[: config.height, : config.width]
    if config.gray_world_exact:
        # Equalize channel means, then rescale globally (a scalar keeps
        # the means equal) so no clipping can break the neutrality.
        means = img.mean(axis=(0, 1))
        img = img * (means.mean() / means)
        return img * min(1.0, 0.9 / img.max())
    return np.clip(img, 0.0, 0.9)


def _sample_outdoor_time(
    rng: np.random.Generator, lat: float, lon: float, offset: float, day_utc: float
) -> tuple[float, float]:
    """(utc_timestamp, cct_position) for a daylight capture.

    cct_position is seconds from the nearer of sunrise/sunset, clipped
    at zero, which drives the time-of-day <-> CCT coupling.
    """
    probe = GeoTime(lat, lon, day_utc + 12 * 3600 - offset, offset)
    events = solar_events(probe)
    sunrise = events.times["sunrise"]
    sunset = events.times["sunset"]
    if not (events.valid["sunrise"] and events.valid["sunset"]):
        local = rng.uniform(8 * 3600, 18 * 3600)
        return day_utc + local - offset, 12 * 3600.0
    local = rng.uniform(sunrise - 1800.0, sunset + 1800.0)
    position = max(min(local - sunrise, sunset - local), 0.0)
    return day_utc + local - offset, position


def synthesize(seed: int, n: int, config: SynthConfig, out_dir: str | os.PathLike) -> Manifest:
    """Render ``n`` scenes plus manifest.json into ``out_dir``.

    Deterministic for a fixed (seed, n, config); ground truths are the
    exact applied illuminant directions.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    samples = []
    # Deterministic block split: leading samples train, then val, then test.
    n_train = round(n * config.split_fractions[0])
    n_val = round(n * config.split_fractions[1])
    for i in range(n):
        lat, lon = _PLACES[int(rng.integers(len(_PLACES)))]
        offset = utc_offset_from_longitude(lon)
        day_utc = float(rng.integers(0, 365)) * 86400.0 + 1704067200.0  # days of 2024
        outdoor = rng.random() < config.outdoor_fraction

        if outdoor:
            utc, position = _sample_outdoor_time(rng, lat, lon, offset, day_utc)
            ramp = min(position / config.cct_ramp_s, 1.0)
            cct = config.cct_horizon + (config.cct_day - config.cct_horizon) * ramp
            iso = float(np.exp(rng.uniform(np.log(50), np.log(400))))
            flash = False
        else:
            local = rng.uniform(7 * 3600, 23 * 3600)
            utc = day_utc + local - offset
            cct = rng.uniform(2500.0, 5500.0)
            iso = float(np.exp(rng.uniform(np.log(800), np.log(6400))))
            flash = bool(rng.random() < 0.4)
            if flash:
                cct = rng.uniform(5000.0, 6000.0)
        cct += rng.normal(0.0, config.cct_jitter)
        shutter = float(np.exp(rng.uniform(np.log(1 / 2000), np.log(1 / 15))))

        ill = cct_to_illuminant(cct)
        rgb = ill.rgb.copy()
        if config.off_locus_sigma > 0:
            rgb[0] *= math.exp(rng.normal(0.0, config.off_locus_sigma))
            rgb[2] *= math.exp(rng.normal(0.0, config.off_locus_sigma))
        ill = Illuminant.from_rgb(rgb)
        gains = ill.rgb / ill.rgb.max()

        reflectance = _sample_reflectance(rng, config)
        clean = reflectance * gains

        mask_rel = None
        if rng.random() < config.mask_fraction:
            mh = int(rng.integers(config.height // 8, config.height // 2))
            mw = int(rng.integers(config.width // 8, config.width // 2))
            my = int(rng.integers(0, config.height - mh))
            mx = int(rng.integers(0, config.width - mw))
            stray = cct_to_illuminant(rng.uniform(1800.0, 10000.0))
            stray_gains = stray.rgb / stray.rgb.max()
            clean[my : my + mh, mx : mx + mw] = (
                reflectance[my : my + mh, mx : mx + mw] * stray_gains
            )
            mask = np.full((config.height, config.width), 255, dtype=np.uint8)
            mask[my : my + mh, mx : mx + mw] = 0
            mask_rel = f"synth-{i:04d}-mask.png"
            save_mask(mask, out / mask_rel)

        sigma = config.noise_base_sigma * iso / 6400.0
        if sigma > 0:
            noisy = np.clip(clean + rng.normal(0.0, sigma, size=clean.shape), 0.0, 1.0)
        else:
            noisy = clean

        raw_rel = f"synth-{i:04d}.png"
        save_raw(RawImage(data=np.clip(noisy, 0.0, 1.0)), out / raw_rel)
        denoised_rel = None
        if config.write_denoised:
            denoised_rel = f"synth-{i:04d}-denoised.png"
            save_raw(RawImage(data=np.clip(clean, 0.0, 1.0)), out / denoised_rel)

        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        samples.append(
            Sample(
                id=f"synth-{i:04d}",
                raw=raw_rel,
                denoised=denoised_rel,
                mask=mask_rel,
                meta=CaptureMeta(
                    utc=float(utc),
                    utc_offset_s=float(offset),
                    lat=lat,
                    lon=lon,
                    iso=iso,
                    shutter_s=shutter,
                    flash=flash,
                ),
                gt_neutral=ill,
                gt_preference=ill,
                split=split,
            )
        )
    manifest = Manifest(camera="synthetic", samples=tuple(samples), base_dir=out)
    write_manifest(manifest, out / "manifest.json")
    return manifest
