"""Angular-error statistics over a split and the per-image report.

Conventions: tail statistics (best 25%, worst 25%, worst 5%) are the
mean over the respective tail, with the tail size ceil(n * fraction)
and at least one element; the trimean is Tukey's (Q1 + 2 Q2 + Q3) / 4
with linearly interpolated quartiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .raw_image import Illuminant
from .training import angular_error


@dataclass(frozen=True)
class ErrorStats:
    """Summary statistics of a list of angular errors, in degrees."""

    mean: float
    median: float
    best25: float
    worst25: float
    worst5: float
    trimean: float
    max: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "median": self.median,
            "best25": self.best25,
            "worst25": self.worst25,
            "worst5": self.worst5,
            "trimean": self.trimean,
            "max": self.max,
        }


def _tail_mean(sorted_errors: np.ndarray, fraction: float, worst: bool) -> float:
    count = max(math.ceil(len(sorted_errors) * fraction), 1)
    tail = sorted_errors[-count:] if worst else sorted_errors[:count]
    return float(tail.mean())


def error_stats(errors: Sequence[float]) -> ErrorStats:
    """Aggregate a nonempty list of angular errors."""
    arr = np.asarray(errors, dtype=np.float64)
    if arr.size == 0:
        raise InvalidArgumentError("error_stats needs at least one error")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidArgumentError("errors must be finite and >= 0")
    s = np.sort(arr)
    q1, q2, q3 = np.percentile(s, [25.0, 50.0, 75.0])
    return ErrorStats(
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        best25=_tail_mean(s, 0.25, worst=False),
        worst25=_tail_mean(s, 0.25, worst=True),
        worst5=_tail_mean(s, 0.05, worst=True),
        trimean=float((q1 + 2.0 * q2 + q3) / 4.0),
        max=float(s[-1]),
    )


def evaluate(
    estimator: Callable[..., Illuminant],
    samples: Sequence,
    ground_truths: Sequence[Illuminant],
    dot_clamp: float = 1e-7,
) -> tuple[ErrorStats, list[dict]]:
    """Run an estimator over samples and aggregate its angular errors.

    ``estimator`` maps one sample to an Illuminant; the caller decides
    what a sample is (the CLI passes loaded images plus metadata) and
    whether masks were applied during feature extraction.
    """
    if len(samples) == 0:
        raise InvalidArgumentError("evaluate needs at least one sample")
    if len(samples) != len(ground_truths):
        raise InvalidArgumentError("samples and ground truths must align")
    report = []
    errors = []
    for sample, gt in zip(samples, ground_truths):
        pred = estimator(sample)
        err = angular_error(pred.rgb, gt.rgb, dot_clamp)
        errors.append(err)
        sample_id = getattr(sample, "id", None)
        report.append(
            {
                "id": sample_id if sample_id is not None else len(report),
                "error_deg": err,
                "prediction": [float(v) for v in pred.rgb],
            }
        )
    return error_stats(errors), report
