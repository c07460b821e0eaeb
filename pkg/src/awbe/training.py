"""Training recipe: angular-error loss, Adam, warmup + cosine schedule,
and the batch-doubling epoch loop.

The loss is the batch-mean angular error (degrees) between the
predicted illuminant — the clamped chromaticity mapped to (R/G, 1, B/G)
and L2-normalized — and the unit ground-truth illuminant. Training is
plain full-batch-sliced SGD over shuffled epochs with bias-corrected
Adam, linear per-step warmup for the first epochs, cosine annealing to
the end, and the batch size doubling every 100 epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError, NumericError, ShapeError
from .model import (
    CHROMA_CLAMP,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    init_params,
)

DEFAULT_EPOCHS = 400
WARMUP_EPOCHS = 5
LR_START = 1e-6
LR_PEAK = 1e-3
BATCH_DOUBLE_EVERY = 100


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and schedule settings."""

    epochs: int = DEFAULT_EPOCHS
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-9
    adam_eps: float = 1e-8
    warmup_epochs: int = WARMUP_EPOCHS
    lr_start: float = LR_START
    lr_peak: float = LR_PEAK
    batch_start: int = 8
    batch_double_every: int = BATCH_DOUBLE_EVERY
    seed: int = 0
    loss_dot_clamp: float = 1e-7
    warmup_steps: int | None = None  # resolved by train() from the dataset size

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if min(self.lr_start, self.lr_peak) <= 0:
            raise InvalidArgumentError("learning rates must be positive")
        if self.batch_start < 1 or self.batch_double_every < 1:
            raise InvalidArgumentError("batch settings must be positive")

    def batch_size_at(self, epoch: int) -> int:
        return self.batch_start * (2 ** (epoch // self.batch_double_every))


@dataclass
class OptimizerState:
    """Per-parameter Adam moments and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            m={n: np.zeros_like(params.tensors[n]) for n in params.learnable_names},
            v={n: np.zeros_like(params.tensors[n]) for n in params.learnable_names},
        )


def angular_error(a, b, dot_clamp: float = 1e-7) -> float:
    """Angle in degrees between two nonzero vectors."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na <= 0.0 or nb <= 0.0 or not (math.isfinite(na) and math.isfinite(nb)):
        raise InvalidArgumentError("angular error needs two nonzero finite vectors")
    dot = float(np.dot(av, bv)) / (na * nb)
    dot = min(max(dot, -1.0 + dot_clamp), 1.0 - dot_clamp)
    return math.degrees(math.acos(dot))


def predicted_illuminants(chroma: np.ndarray) -> np.ndarray:
    """Batched chromaticity -> unit RGB illuminant map used by the loss."""
    c = np.maximum(np.asarray(chroma, dtype=np.float64), CHROMA_CLAMP)
    v = np.stack([c[:, 0], np.ones(c.shape[0]), c[:, 1]], axis=1)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def angular_loss(
    chroma: np.ndarray,
    gt: np.ndarray,
    dot_clamp: float = 1e-7,
    clamp_components: bool = True,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-mean angular error and its gradient w.r.t. the chromaticities.

    Returns (loss_degrees, per_sample_errors, d_loss/d_chroma) where the
    gradient flows through the component clamp when enabled (zero where
    clamped), the L2 normalization, and the clipped arccos.

    The component clamp exists to produce valid illuminants at
    prediction time; the training loop disables it so that no output
    region is gradient-dead (a chromaticity pushed negative could never
    recover through a hard clamp).
    """
    c = np.asarray(chroma, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if c.ndim != 2 or c.shape[1] != 2:
        raise ShapeError(f"chromaticities must be (N, 2), got {c.shape}")
    if g.shape != (c.shape[0], 3):
        raise ShapeError(f"ground truth must be ({c.shape[0]}, 3), got {g.shape}")
    n = c.shape[0]

    if clamp_components:
        clamped = np.maximum(c, CHROMA_CLAMP)
        active = (c > CHROMA_CLAMP).astype(np.float64)
    else:
        clamped = c
        active = np.ones_like(c)
    v = np.stack([clamped[:, 0], np.ones(n), clamped[:, 1]], axis=1)
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    u = v / norm

    g_unit = g / np.linalg.norm(g, axis=1, keepdims=True)
    dot = (u * g_unit).sum(axis=1)
    lo, hi = -1.0 + dot_clamp, 1.0 - dot_clamp
    dot_c = np.clip(dot, lo, hi)
    errors = np.degrees(np.arccos(dot_c))
    loss = float(errors.mean())
    if not math.isfinite(loss):
        raise NumericError("angular loss is non-finite")

    inside = (dot > lo) & (dot < hi)
    d_theta_d_dot = np.where(
        inside, -(180.0 / math.pi) / np.sqrt(1.0 - dot_c ** 2), 0.0
    )
    d_dot = (d_theta_d_dot / n)[:, None] * g_unit  # d loss / d u
    # through u = v / ||v||:  dv = (du - u (u . du)) / ||v||
    d_v = (d_dot - u * (u * d_dot).sum(axis=1, keepdims=True)) / norm
    d_chroma = np.stack([d_v[:, 0], d_v[:, 2]], axis=1) * active
    return loss, errors, d_chroma


def lr_at(config: TrainConfig, epoch: int, step: int) -> float:
    """Learning rate for a global step inside a given epoch.

    Warmup epochs ramp linearly per step from lr_start to lr_peak (the
    total warmup step count comes from config.warmup_steps); afterwards
    the rate follows cosine annealing over the remaining epochs.
    """
    if epoch >= config.epochs:
        raise InvalidArgumentError(f"epoch {epoch} outside the configured {config.epochs}")
    if epoch < config.warmup_epochs:
        total = config.warmup_steps
        if total is None or total < 1:
            raise InvalidArgumentError("warmup_steps must be resolved before lr_at in warmup")
        frac = min(step / total, 1.0)
        return config.lr_start + (config.lr_peak - config.lr_start) * frac
    denom = max(config.epochs - config.warmup_epochs, 1)
    progress = (epoch - config.warmup_epochs) / denom
    return config.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def adam_step(
    params: ModelParams,
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    config: TrainConfig,
) -> None:
    """One bias-corrected Adam update with coupled L2 weight decay."""
    b1, b2 = config.betas
    state.step += 1
    t = state.step
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name in params.learnable_names:
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for tensor {name!r}")
        if config.weight_decay:
            g = g + config.weight_decay * params.tensors[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        params.tensors[name] -= lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
    params.version += 1


@dataclass
class TrainResult:
    """Best parameters plus per-epoch metrics."""

    params: ModelParams
    metrics: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_error: float = math.inf


def evaluate_arrays(
    params: ModelParams, hist: np.ndarray, tc: np.ndarray, gt: np.ndarray,
    dot_clamp: float = 1e-7,
) -> np.ndarray:
    """Eval-mode per-sample angular errors for precomputed feature arrays."""
    chroma, _ = forward(params, hist, tc, mode="eval")
    pred = predicted_illuminants(chroma)
    g_unit = gt / np.linalg.norm(gt, axis=1, keepdims=True)
    dot = np.clip((pred * g_unit).sum(axis=1), -1.0 + dot_clamp, 1.0 - dot_clamp)
    return np.degrees(np.arccos(dot))


def train(
    hist_train: np.ndarray,
    tc_train: np.ndarray,
    gt_train: np.ndarray,
    model_config: ModelConfig,
    train_config: TrainConfig,
    hist_val: np.ndarray | None = None,
    tc_val: np.ndarray | None = None,
    gt_val: np.ndarray | None = None,
    log=None,
) -> TrainResult:
    """Run the full recipe on precomputed feature arrays.

    Checkpoints the parameters with the lowest validation mean angular
    error (train loss stands in when no validation split is given).
    """
    n = hist_train.shape[0]
    if n < 1:
        raise InvalidArgumentError("training needs at least one sample")
    if tc_train.shape[0] != n or gt_train.shape[0] != n:
        raise ShapeError("training arrays disagree in sample count")
    has_val = hist_val is not None and hist_val.shape[0] > 0

    steps_per_warmup_epoch = math.ceil(n / train_config.batch_start)
    cfg = replace(
        train_config,
        warmup_steps=train_config.warmup_epochs * steps_per_warmup_epoch,
    )

    params = init_params(model_config)
    state = OptimizerState.for_params(params)
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(params=params.copy())

    global_step = 0
    for epoch in range(cfg.epochs):
        batch_size = min(cfg.batch_size_at(epoch), n)
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            lr = lr_at(cfg, epoch, global_step)
            chroma, tape = forward(params, hist_train[idx], tc_train[idx], mode="train")
            loss, _, d_chroma = angular_loss(
                chroma, gt_train[idx], cfg.loss_dot_clamp, clamp_components=False
            )
            grads = backward(params, tape, d_chroma)
            adam_step(params, grads, state, lr, cfg)
            epoch_losses.append(loss)
            global_step += 1

        train_loss = float(np.mean(epoch_losses))
        if has_val:
            val_errors = evaluate_arrays(params, hist_val, tc_val, gt_val, cfg.loss_dot_clamp)
            val_mean = float(val_errors.mean())
        else:
            val_mean = train_loss
        entry = {
            "epoch": epoch,
            "train_loss_deg": train_loss,
            "val_mean_deg": val_mean,
            "batch_size": batch_size,
            "lr": lr_at(cfg, epoch, max(global_step - 1, 0)),
        }
        result.metrics.append(entry)
        if log is not None:
            log(entry)
        if val_mean < result.best_val_error:
            result.best_val_error = val_mean
            result.best_epoch = epoch
            result.params = params.copy()
    return result
