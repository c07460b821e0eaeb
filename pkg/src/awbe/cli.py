"""Command-line entry point.

Subcommands: solar, synth, calibrate, train, predict, eval, apply-wb.
Machine-readable output is JSON on stdout; diagnostics go to stderr.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import METHODS, BaselineConfig, estimate_baseline
from .dataset import Manifest, SynthConfig, load_manifest, synthesize
from .errors import AwbeError, InvalidArgumentError, ShapeError
from .features import FeatureConfig
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import (
    Calibration,
    calibrate,
    evaluate_manifest,
    extract_split,
    load_calibration,
    model_illuminant,
    sample_features,
    save_calibration,
)
from .raw_image import Illuminant, apply_white_balance, load_mask, load_raw, save_raw
from .solar import EVENTS, GeoTime, solar_events
from .training import TrainConfig, train


def _fmt_hms(seconds: float) -> str:
    s = int(round(seconds)) % 86400
    return f"{s // 3600:02d}:{s % 3600 // 60:02d}:{s % 60:02d}"


def _parse_date(date: str) -> int:
    """Days since the epoch for a YYYY-MM-DD string."""
    try:
        year, month, day = (int(p) for p in date.split("-"))
    except ValueError as exc:
        raise InvalidArgumentError(f"date must be YYYY-MM-DD, got {date!r}") from exc
    y = year - (1 if month <= 2 else 0)
    era = (y if y >= 0 else y - 399) // 400
    yoe = y - era * 400
    doy = (153 * (month + (-3 if month > 2 else 9)) + 2) // 5 + day - 1
    doe = yoe * 365 + yoe // 4 - yoe // 100 + doy
    return era * 146097 + doe - 719468


def _cmd_solar(args) -> int:
    from .solar import utc_offset_from_longitude

    offset = args.utc_offset if args.utc_offset is not None else utc_offset_from_longitude(args.lon)
    days = _parse_date(args.date)
    geo = GeoTime(
        latitude=args.lat,
        longitude=args.lon,
        utc_timestamp=days * 86400.0 + 43200.0 - offset,
        utc_offset=offset,
    )
    events = solar_events(geo)
    print(f"solar events for lat={args.lat} lon={args.lon} on {args.date} (utc offset {offset:+.0f} s)")
    for name in EVENTS:
        tag = "" if events.valid[name] else "  [does not occur; fallback time]"
        print(f"  {name:9s} {_fmt_hms(events.times[name])}{tag}")
    doc = {name: events.times[name] for name in EVENTS}
    doc["valid_flags"] = {name: events.valid[name] for name in EVENTS}
    print(json.dumps(doc))
    return 0


def _cmd_synth(args) -> int:
    config = SynthConfig(
        width=args.width,
        height=args.height,
        outdoor_fraction=args.outdoor_fraction,
        noise_base_sigma=args.noise,
        mask_fraction=args.mask_fraction,
        gray_world_exact=args.gray_world_exact,
        reflectance_tint_sigma=args.tint_sigma,
        split_fractions=tuple(args.splits),
    )
    manifest = synthesize(args.seed, args.n, config, args.out)
    counts = {s: len(manifest.split_samples(s)) for s in ("train", "val", "test")}
    print(json.dumps({"out": str(args.out), "samples": len(manifest.samples), "splits": counts}))
    return 0


def _cmd_calibrate(args) -> int:
    manifest = load_manifest(args.manifest)
    cal = calibrate(
        manifest,
        bins=args.h,
        config=FeatureConfig.parse(args.features),
        masking=args.masking == "on",
    )
    save_calibration(cal, args.out)
    print(json.dumps({"out": str(args.out), "h": cal.grid.bins, "feature_dim": cal.config.dim}))
    return 0


def _load_train_config(args) -> TrainConfig:
    cfg = TrainConfig(seed=args.seed)
    if args.config:
        overrides = json.loads(Path(args.config).read_text())
        known = {k: v for k, v in overrides.items() if hasattr(cfg, k)}
        unknown = set(overrides) - set(known)
        if unknown:
            raise InvalidArgumentError(f"unknown train-config keys: {sorted(unknown)}")
        if "betas" in known:
            known["betas"] = tuple(known["betas"])
        cfg = replace(cfg, **known)
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    return cfg


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    cal = load_calibration(args.calibration)
    if args.features is not None and args.features != cal.config.name():
        raise ShapeError(
            f"--features {args.features} does not match the calibration file "
            f"({cal.config.name()}); recalibrate instead"
        )
    masking = args.masking == "on"
    hist_tr, tc_tr, gt_tr, _ = extract_split(manifest, "train", cal, args.gt, masking)
    hist_va, tc_va, gt_va, _ = extract_split(manifest, "val", cal, args.gt, masking)
    if hist_tr.shape[0] == 0:
        raise InvalidArgumentError("manifest has no training samples")

    train_config = _load_train_config(args)
    model_config = ModelConfig(
        bins=cal.grid.bins,
        time_capture_dim=cal.config.dim,
        seed=args.seed,
    )
    result = train(
        hist_tr, tc_tr, gt_tr, model_config, train_config,
        hist_val=hist_va if hist_va.shape[0] else None,
        tc_val=tc_va if hist_va.shape[0] else None,
        gt_val=gt_va if hist_va.shape[0] else None,
        log=lambda e: print(
            f"epoch {e['epoch']:4d}  train {e['train_loss_deg']:7.3f} deg  "
            f"val {e['val_mean_deg']:7.3f} deg  batch {e['batch_size']}",
            file=sys.stderr,
        ),
    )
    save_checkpoint(result.params, args.out)
    metrics_path = args.metrics or f"{args.out}.metrics.json"
    Path(metrics_path).write_text(json.dumps(result.metrics, indent=2) + "\n")
    print(
        json.dumps(
            {
                "checkpoint": str(args.out),
                "metrics": str(metrics_path),
                "best_epoch": result.best_epoch,
                "best_val_mean_deg": result.best_val_error,
                "params": result.params.param_count(),
            }
        )
    )
    return 0


def _predict_one(args, manifest: Manifest | None) -> Illuminant:
    if args.method == "model":
        if not (args.checkpoint and args.calibration and manifest and args.id):
            raise InvalidArgumentError(
                "predict --method model needs --checkpoint, --calibration, --manifest and --id"
            )
        cal = load_calibration(args.calibration)
        params = load_checkpoint(args.checkpoint)
        _check_model_matches(params.config, cal)
        sample = _find_sample(manifest, args.id)
        hist, tc = sample_features(manifest, sample, cal, args.masking == "on")
        return model_illuminant(params, hist, tc)
    cfg = BaselineConfig.preset(args.method)
    if args.image:
        img = load_raw(args.image)
        mask = load_mask(args.mask) if args.mask else None
    else:
        if not (manifest and args.id):
            raise InvalidArgumentError("predict needs --image or --manifest plus --id")
        sample = _find_sample(manifest, args.id)
        img = load_raw(manifest.resolve(sample.raw))
        mask = (
            load_mask(manifest.resolve(sample.mask))
            if args.masking == "on" and sample.mask
            else None
        )
    return estimate_baseline(img, mask, cfg)


def _find_sample(manifest: Manifest, sample_id: str):
    for s in manifest.samples:
        if s.id == sample_id:
            return s
    raise InvalidArgumentError(f"no sample with id {sample_id!r} in manifest")


def _check_model_matches(config: ModelConfig, cal: Calibration) -> None:
    if config.bins != cal.grid.bins or config.time_capture_dim != cal.config.dim:
        raise ShapeError(
            f"checkpoint expects h={config.bins}, d={config.time_capture_dim}; "
            f"calibration provides h={cal.grid.bins}, d={cal.config.dim}"
        )


def _cmd_predict(args) -> int:
    manifest = load_manifest(args.manifest) if args.manifest else None
    ill = _predict_one(args, manifest)
    print(
        json.dumps(
            {
                "rgb": [float(v) for v in ill.rgb],
                "rg": float(ill.rgb[0] / ill.rgb[1]),
                "bg": float(ill.rgb[2] / ill.rgb[1]),
                "method": args.method,
            }
        )
    )
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    masking = args.masking == "on"
    params = cal = None
    if args.method == "model":
        if not (args.checkpoint and args.calibration):
            raise InvalidArgumentError("eval --method model needs --checkpoint and --calibration")
        cal = load_calibration(args.calibration)
        params = load_checkpoint(args.checkpoint)
        _check_model_matches(params.config, cal)
    stats, report = evaluate_manifest(
        manifest, args.split, args.method, args.gt, masking, params=params, cal=cal
    )

    print(f"method {args.method}  split {args.split}  gt {args.gt}  masking {args.masking}  n {len(report)}")
    print("  mean   median best25 worst25 worst5 trimean max   (degrees)")
    print(
        f"  {stats.mean:6.2f} {stats.median:6.2f} {stats.best25:6.2f} "
        f"{stats.worst25:7.2f} {stats.worst5:6.2f} {stats.trimean:7.2f} {stats.max:5.2f}"
    )
    doc = {"per_image": report, "stats": stats.to_dict()}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
    else:
        print(json.dumps(doc))
    return 0


def _cmd_apply_wb(args) -> int:
    img = load_raw(args.image)
    if not args.illuminant and not args.method:
        raise InvalidArgumentError("apply-wb needs --illuminant or --method")
    if args.illuminant:
        try:
            parts = [float(p) for p in args.illuminant.split(",")]
        except ValueError as exc:
            raise InvalidArgumentError("--illuminant must be r,g,b") from exc
        ill = Illuminant.from_rgb(parts)
    else:
        manifest = load_manifest(args.manifest) if args.manifest else None
        ill = _predict_one(args, manifest)
    balanced = apply_white_balance(img, ill)
    save_raw(balanced, args.out)
    if args.preview:
        import cv2

        preview = (np.power(balanced.data, 1.0 / 2.2) * 255.0).round().astype(np.uint8)
        cv2.imwrite(args.preview, preview[:, :, ::-1])
    print(json.dumps({"out": str(args.out), "illuminant": [float(v) for v in ill.rgb]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="awbe", description="Contextual-metadata illuminant estimation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solar", help="print solar event times for a location and date")
    p.add_argument("--lat", type=float, required=True)
    p.add_argument("--lon", type=float, required=True)
    p.add_argument("--date", required=True, help="YYYY-MM-DD (local date)")
    p.add_argument("--utc-offset", type=float, default=None, help="local offset in seconds")
    p.set_defaults(func=_cmd_solar)

    p = sub.add_parser("synth", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=48)
    p.add_argument("--noise", type=float, default=0.0, help="noise sigma at ISO 6400")
    p.add_argument("--outdoor-fraction", type=float, default=0.7)
    p.add_argument("--mask-fraction", type=float, default=0.0)
    p.add_argument("--tint-sigma", type=float, default=0.0)
    p.add_argument("--gray-world-exact", action="store_true")
    p.add_argument("--splits", type=float, nargs=3, default=[1.0, 0.0, 0.0], metavar=("TRAIN", "VAL", "TEST"))
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("calibrate", help="fit histogram bins and feature normalization")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--h", type=int, default=48, help="histogram bins per axis")
    p.add_argument("--features", default="none", choices=["none", "n", "r", "nr"])
    p.add_argument("--masking", default="on", choices=["on", "off"])
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("train", help="train the estimator")
    p.add_argument("--manifest", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--config", default=None, help="JSON file with train-config overrides")
    p.add_argument("--metrics", default=None, help="per-epoch metrics JSON path")
    p.add_argument("--gt", default="neutral", choices=["neutral", "preference"])
    p.add_argument("--features", default=None, choices=["none", "n", "r", "nr"])
    p.add_argument("--masking", default="on", choices=["on", "off"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="estimate the illuminant of one image")
    p.add_argument("--method", required=True, choices=list(METHODS) + ["model"])
    p.add_argument("--image", default=None, help="16-bit PNG (statistical methods)")
    p.add_argument("--mask", default=None, help="8-bit PNG mask for --image")
    p.add_argument("--manifest", default=None)
    p.add_argument("--id", default=None, help="sample id within --manifest")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--calibration", default=None)
    p.add_argument("--masking", default="on", choices=["on", "off"])
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="evaluate a method over a manifest split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--method", required=True, choices=list(METHODS) + ["model"])
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--calibration", default=None)
    p.add_argument("--gt", default="neutral", choices=["neutral", "preference"])
    p.add_argument("--masking", default="on", choices=["on", "off"])
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("apply-wb", help="white-balance an image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="16-bit PNG output")
    p.add_argument("--preview", default=None, help="optional gamma-corrected 8-bit PNG")
    p.add_argument("--illuminant", default=None, help="r,g,b components")
    p.add_argument("--method", default=None, choices=list(METHODS) + ["model"])
    p.add_argument("--mask", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--id", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--calibration", default=None)
    p.add_argument("--masking", default="on", choices=["on", "off"])
    p.set_defaults(func=_cmd_apply_wb)

    return parser


def run(argv) -> int:
    """Execute one CLI invocation; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AwbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
