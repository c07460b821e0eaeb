"""The compact illuminant estimator: two branches, a fusion head, and
hand-written reverse-mode gradients.

Branches: a single affine map embeds the normalized time-capture
vector into 16 dims; three stride-2 ELU convolutions (channels
4 -> 8 -> 16 -> 16) followed by global average pooling and an affine map
embed the h x h x 4 histogram feature into 16 dims. The concatenated
32-dim vector passes through batch norm, an ELU-activated 16-wide
affine layer, and a final affine layer producing R/G, B/G chromaticity.

All tensors are float64 numpy arrays; checkpoints store float32.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    CheckpointFormatError,
    InvalidArgumentError,
    NumericError,
    ShapeError,
    StaleTapeError,
)
from .raw_image import Illuminant

LATENT_DIM = 16
FUSED_DIM = 2 * LATENT_DIM
OUTPUT_DIM = 2
CONV_KERNEL = 3
CONV_STRIDE = 2
CONV_PAD = 1
BN_EPS = 1e-5
CHROMA_CLAMP = 1e-4

CHECKPOINT_MAGIC = b"AWBE"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; latent/fused/output widths are fixed."""

    bins: int = 48
    time_capture_dim: int = 15
    conv_channels: tuple[int, int, int] = (8, 16, 16)
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.bins < 2:
            raise InvalidArgumentError("bins must be >= 2")
        if self.time_capture_dim < 1:
            raise InvalidArgumentError("time_capture_dim must be >= 1")
        if len(self.conv_channels) != 3 or any(c < 1 for c in self.conv_channels):
            raise InvalidArgumentError("conv_channels must be three positive counts")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise InvalidArgumentError("bn_momentum must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "bins": self.bins,
            "time_capture_dim": self.time_capture_dim,
            "conv_channels": list(self.conv_channels),
            "bn_momentum": self.bn_momentum,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            bins=int(d["bins"]),
            time_capture_dim=int(d["time_capture_dim"]),
            conv_channels=tuple(int(c) for c in d["conv_channels"]),
            bn_momentum=float(d["bn_momentum"]),
            seed=int(d["seed"]),
        )


@dataclass(frozen=True)
class Chromaticity:
    """R/G and B/G coordinates of an illuminant estimate."""

    rg: float
    bg: float


def _tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor name -> shape map; order fixes checkpoint layout."""
    c1, c2, c3 = config.conv_channels
    k = CONV_KERNEL
    return {
        "t_fc.w": (LATENT_DIM, config.time_capture_dim),
        "t_fc.b": (LATENT_DIM,),
        "h_conv1.w": (c1, 4, k, k),
        "h_conv1.b": (c1,),
        "h_conv2.w": (c2, c1, k, k),
        "h_conv2.b": (c2,),
        "h_conv3.w": (c3, c2, k, k),
        "h_conv3.b": (c3,),
        "h_fc.w": (LATENT_DIM, c3),
        "h_fc.b": (LATENT_DIM,),
        "l_bn.gamma": (FUSED_DIM,),
        "l_bn.beta": (FUSED_DIM,),
        "l_bn.running_mean": (FUSED_DIM,),
        "l_bn.running_var": (FUSED_DIM,),
        "l_fc1.w": (LATENT_DIM, FUSED_DIM),
        "l_fc1.b": (LATENT_DIM,),
        "l_fc2.w": (OUTPUT_DIM, LATENT_DIM),
        "l_fc2.b": (OUTPUT_DIM,),
    }


# Running statistics are state, not learnable parameters.
_BUFFER_NAMES = ("l_bn.running_mean", "l_bn.running_var")


class ModelParams:
    """All named tensors of the estimator plus a version counter.

    The version increments on every optimizer update; activation tapes
    remember the version they were produced under so backward() can
    reject stale tapes.
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        shapes = _tensor_shapes(config)
        if set(tensors) != set(shapes):
            missing = set(shapes) - set(tensors)
            extra = set(tensors) - set(shapes)
            raise ShapeError(f"tensor set mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, shape in shapes.items():
            t = tensors[name]
            if t.shape != shape:
                raise ShapeError(f"tensor {name!r} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise NumericError(f"tensor {name!r} contains non-finite values")
        self.config = config
        self.tensors = {name: tensors[name].astype(np.float64) for name in shapes}
        self.version = 0

    @property
    def learnable_names(self) -> list[str]:
        return [n for n in self.tensors if n not in _BUFFER_NAMES]

    def param_count(self) -> int:
        """Number of learnable scalar parameters."""
        return int(sum(self.tensors[n].size for n in self.learnable_names))

    def copy(self) -> "ModelParams":
        out = ModelParams(self.config, {n: t.copy() for n, t in self.tensors.items()})
        out.version = self.version
        return out


def init_params(config: ModelConfig) -> ModelParams:
    """Seeded init: weights uniform in +/-sqrt(1/fan_in), biases zero,
    batch-norm scale one / shift zero, running stats (0, 1)."""
    rng = np.random.default_rng(config.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape in _tensor_shapes(config).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape)
        elif name in ("l_bn.gamma", "l_bn.running_var"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(config, tensors)


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite activation after layer {name!r}")


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(z))


def _elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(z))


def _conv_out_size(size: int) -> int:
    return (size + 2 * CONV_PAD - CONV_KERNEL) // CONV_STRIDE + 1


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    n, c, h, wd = x.shape
    cout = w.shape[0]
    hout, wout = _conv_out_size(h), _conv_out_size(wd)
    xp = np.pad(x, ((0, 0), (0, 0), (CONV_PAD, CONV_PAD), (CONV_PAD, CONV_PAD)))
    cols = np.empty((n, c, CONV_KERNEL, CONV_KERNEL, hout, wout))
    for ki in range(CONV_KERNEL):
        for kj in range(CONV_KERNEL):
            cols[:, :, ki, kj] = xp[
                :, :, ki : ki + CONV_STRIDE * hout : CONV_STRIDE,
                kj : kj + CONV_STRIDE * wout : CONV_STRIDE,
            ]
    cols = cols.reshape(n, c * CONV_KERNEL * CONV_KERNEL, hout * wout)
    y = np.matmul(w.reshape(cout, -1), cols) + b[None, :, None]
    return y.reshape(n, cout, hout, wout), cols


def _conv_backward(dy: np.ndarray, cols: np.ndarray, w: np.ndarray, x_shape: tuple):
    n, c, h, wd = x_shape
    cout = w.shape[0]
    hout, wout = dy.shape[2], dy.shape[3]
    dyf = dy.reshape(n, cout, hout * wout)
    dw = np.einsum("nol,ncl->oc", dyf, cols).reshape(w.shape)
    db = dyf.sum(axis=(0, 2))
    dcols = np.matmul(w.reshape(cout, -1).T, dyf)
    dcols = dcols.reshape(n, c, CONV_KERNEL, CONV_KERNEL, hout, wout)
    dxp = np.zeros((n, c, h + 2 * CONV_PAD, wd + 2 * CONV_PAD))
    for ki in range(CONV_KERNEL):
        for kj in range(CONV_KERNEL):
            dxp[
                :, :, ki : ki + CONV_STRIDE * hout : CONV_STRIDE,
                kj : kj + CONV_STRIDE * wout : CONV_STRIDE,
            ] += dcols[:, :, ki, kj]
    return dw, db, dxp[:, :, CONV_PAD : CONV_PAD + h, CONV_PAD : CONV_PAD + wd]


@dataclass
class ForwardTape:
    """Intermediate activations recorded by a train-mode forward pass."""

    mode: str
    params_version: int
    batch: int
    x_t: np.ndarray
    conv_inputs: list  # x shape per conv layer
    conv_cols: list
    conv_pre: list  # pre-activation z per conv layer
    pool_hw: tuple[int, int]
    pooled: np.ndarray
    fused: np.ndarray
    bn_hat: np.ndarray
    bn_scale: np.ndarray  # 1/sqrt(var + eps)
    bn_out: np.ndarray
    fc1_pre: np.ndarray
    fc1_out: np.ndarray


def _as_batch_hist(hist: np.ndarray, bins: int) -> np.ndarray:
    h = np.asarray(hist, dtype=np.float64)
    if h.ndim == 3:
        h = h[None]
    if h.ndim != 4 or h.shape[1:] != (bins, bins, 4):
        raise ShapeError(f"histogram feature must be (N, {bins}, {bins}, 4), got {h.shape}")
    return np.ascontiguousarray(np.transpose(h, (0, 3, 1, 2)))


def _as_batch_tc(tc: np.ndarray, dim: int) -> np.ndarray:
    t = np.asarray(tc, dtype=np.float64)
    if t.ndim == 1:
        t = t[None]
    if t.ndim != 2 or t.shape[1] != dim:
        raise ShapeError(f"time-capture feature must be (N, {dim}), got {t.shape}")
    return t


def forward(
    params: ModelParams,
    hist: np.ndarray,
    tc: np.ndarray,
    mode: str = "eval",
) -> tuple[np.ndarray, ForwardTape]:
    """Run the estimator on a batch; returns (N, 2) chromaticities and a tape.

    ``hist`` is (N, h, h, 4) or a single (h, h, 4) feature; ``tc`` is
    (N, d) or (d,). Train mode normalizes with batch statistics and
    updates the running stats in place; eval mode uses running stats.
    """
    if mode not in ("train", "eval"):
        raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    cfg = params.config
    t = params.tensors
    x_h = _as_batch_hist(hist, cfg.bins)
    x_t = _as_batch_tc(tc, cfg.time_capture_dim)
    if x_h.shape[0] != x_t.shape[0]:
        raise ShapeError(f"batch mismatch: {x_h.shape[0]} histograms vs {x_t.shape[0]} capture vectors")
    n = x_h.shape[0]

    v_t = x_t @ t["t_fc.w"].T + t["t_fc.b"]
    _check_finite("t_fc", v_t)

    conv_inputs, conv_cols, conv_pre = [], [], []
    a = x_h
    for layer in ("h_conv1", "h_conv2", "h_conv3"):
        conv_inputs.append(a.shape)
        z, cols = _conv_forward(a, t[f"{layer}.w"], t[f"{layer}.b"])
        _check_finite(layer, z)
        conv_cols.append(cols)
        conv_pre.append(z)
        a = _elu(z)
    pool_hw = (a.shape[2], a.shape[3])
    pooled = a.mean(axis=(2, 3))
    v_h = pooled @ t["h_fc.w"].T + t["h_fc.b"]
    _check_finite("h_fc", v_h)

    fused = np.concatenate([v_t, v_h], axis=1)
    if mode == "train":
        mu = fused.mean(axis=0)
        var = fused.var(axis=0)
        m = cfg.bn_momentum
        t["l_bn.running_mean"] *= 1.0 - m
        t["l_bn.running_mean"] += m * mu
        t["l_bn.running_var"] *= 1.0 - m
        t["l_bn.running_var"] += m * var
    else:
        mu = t["l_bn.running_mean"]
        var = t["l_bn.running_var"]
    bn_scale = 1.0 / np.sqrt(var + BN_EPS)
    bn_hat = (fused - mu) * bn_scale
    bn_out = t["l_bn.gamma"] * bn_hat + t["l_bn.beta"]
    _check_finite("l_bn", bn_out)

    fc1_pre = bn_out @ t["l_fc1.w"].T + t["l_fc1.b"]
    fc1_out = _elu(fc1_pre)
    out = fc1_out @ t["l_fc2.w"].T + t["l_fc2.b"]
    _check_finite("l_fc2", out)

    tape = ForwardTape(
        mode=mode,
        params_version=params.version,
        batch=n,
        x_t=x_t,
        conv_inputs=conv_inputs,
        conv_cols=conv_cols,
        conv_pre=conv_pre,
        pool_hw=pool_hw,
        pooled=pooled,
        fused=fused,
        bn_hat=bn_hat,
        bn_scale=bn_scale,
        bn_out=bn_out,
        fc1_pre=fc1_pre,
        fc1_out=fc1_out,
    )
    return out, tape


def backward(
    params: ModelParams, tape: ForwardTape, loss_grad: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of every learnable tensor given d(loss)/d(output).

    Requires the tape of a train-mode forward run under the current
    parameter version.
    """
    if tape.mode != "train":
        raise StaleTapeError("backward needs a tape from a train-mode forward")
    if tape.params_version != params.version:
        raise StaleTapeError(
            f"tape was recorded at params version {tape.params_version}, "
            f"current is {params.version}"
        )
    t = params.tensors
    dout = np.asarray(loss_grad, dtype=np.float64)
    if dout.shape != (tape.batch, OUTPUT_DIM):
        raise ShapeError(f"loss gradient must be ({tape.batch}, {OUTPUT_DIM}), got {dout.shape}")

    grads: dict[str, np.ndarray] = {}

    grads["l_fc2.w"] = dout.T @ tape.fc1_out
    grads["l_fc2.b"] = dout.sum(axis=0)
    d_fc1_out = dout @ t["l_fc2.w"]
    d_fc1_pre = d_fc1_out * _elu_grad(tape.fc1_pre)

    grads["l_fc1.w"] = d_fc1_pre.T @ tape.bn_out
    grads["l_fc1.b"] = d_fc1_pre.sum(axis=0)
    d_bn_out = d_fc1_pre @ t["l_fc1.w"]

    grads["l_bn.gamma"] = (d_bn_out * tape.bn_hat).sum(axis=0)
    grads["l_bn.beta"] = d_bn_out.sum(axis=0)
    d_hat = d_bn_out * t["l_bn.gamma"]
    d_fused = (
        d_hat
        - d_hat.mean(axis=0)
        - tape.bn_hat * (d_hat * tape.bn_hat).mean(axis=0)
    ) * tape.bn_scale

    d_vt = d_fused[:, :LATENT_DIM]
    d_vh = d_fused[:, LATENT_DIM:]

    grads["t_fc.w"] = d_vt.T @ tape.x_t
    grads["t_fc.b"] = d_vt.sum(axis=0)

    grads["h_fc.w"] = d_vh.T @ tape.pooled
    grads["h_fc.b"] = d_vh.sum(axis=0)
    d_pooled = d_vh @ t["h_fc.w"]

    ph, pw = tape.pool_hw
    da = np.broadcast_to(
        d_pooled[:, :, None, None] / (ph * pw),
        (tape.batch, d_pooled.shape[1], ph, pw),
    )
    for idx, layer in ((2, "h_conv3"), (1, "h_conv2"), (0, "h_conv1")):
        dz = da * _elu_grad(tape.conv_pre[idx])
        dw, db, dx = _conv_backward(dz, tape.conv_cols[idx], t[f"{layer}.w"], tape.conv_inputs[idx])
        grads[f"{layer}.w"] = dw
        grads[f"{layer}.b"] = db
        da = dx
    return grads


def chroma_to_illuminant(chroma: Chromaticity | tuple[float, float]) -> Illuminant:
    """Map (R/G, B/G) to the unit RGB illuminant (R/G, 1, B/G)/norm.

    Components are clamped to 1e-4 first, so even wild estimates map to
    a valid illuminant.
    """
    if isinstance(chroma, Chromaticity):
        rg, bg = chroma.rg, chroma.bg
    else:
        rg, bg = float(chroma[0]), float(chroma[1])
    v = np.array([max(rg, CHROMA_CLAMP), 1.0, max(bg, CHROMA_CLAMP)])
    return Illuminant(rgb=v / np.linalg.norm(v))


def flops(config: ModelConfig) -> int:
    """Multiply-add based FLOP estimate of one eval-mode forward pass."""
    total = 2 * config.time_capture_dim * LATENT_DIM
    size = config.bins
    cin = 4
    for cout in config.conv_channels:
        out_size = _conv_out_size(size)
        total += 2 * cin * CONV_KERNEL * CONV_KERNEL * cout * out_size * out_size
        total += cout * out_size * out_size  # ELU
        size, cin = out_size, cout
    total += cin * size * size  # pooling
    total += 2 * cin * LATENT_DIM
    total += 6 * FUSED_DIM  # batch norm with precomputed stats
    total += 2 * FUSED_DIM * LATENT_DIM + LATENT_DIM
    total += 2 * LATENT_DIM * OUTPUT_DIM
    return int(total)


def save_checkpoint(params: ModelParams, path: str | os.PathLike) -> None:
    """Write magic, version, JSON header, then float32 LE payloads."""
    names = list(_tensor_shapes(params.config))
    manifest = []
    offset = 0
    payloads = []
    for name in names:
        arr = params.tensors[name].astype("<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps(
        {"config": params.config.to_dict(), "tensors": manifest},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for blob in payloads:
            f.write(blob)


def load_checkpoint(
    path: str | os.PathLike, expected_config: ModelConfig | None = None
) -> ModelParams:
    """Read a checkpoint; optionally verify it matches an expected config."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    (header_len,) = struct.unpack_from("<I", data, 8)
    header_end = 12 + header_len
    if len(data) < header_end:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:header_end].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        manifest = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"{path}: malformed header ({exc})") from exc

    expected_shapes = _tensor_shapes(expected_config or config)
    tensors: dict[str, np.ndarray] = {}
    payload = data[header_end:]
    for entry in manifest:
        name = entry["name"]
        shape = tuple(int(s) for s in entry["shape"])
        if name in expected_shapes and shape != expected_shapes[name]:
            raise ShapeError(
                f"{path}: tensor {name!r} has shape {shape}, "
                f"expected {expected_shapes[name]} for the configured model"
            )
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointFormatError(f"{path}: truncated payload for tensor {name!r}")
        tensors[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).astype(np.float64)
    return ModelParams(config, tensors)
