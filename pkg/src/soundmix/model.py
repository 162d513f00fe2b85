"""Spectrogram CNN with hand-written forward and backward passes.

Architecture: for each width in ``conv_channels`` a same-padded 3x3
convolution, ReLU and 2x2 max pool; then a 128-unit ReLU dense layer and a
linear output layer producing one raw logit per class. Training uses the
fused sigmoid/binary-cross-entropy loss.
"""
from __future__ import annotations

import itertools
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigMismatch, InvalidTarget, IoFailure, ShapeMismatch, StaleCache, UnknownSchema

_CKPT_MAGIC = b"SMCK"
_tokens = itertools.count(1)

_SIGMOID_LO = np.nextafter(0.0, 1.0)
_SIGMOID_HI = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple[int, int, int] = (1, 128, 128)
    conv_channels: tuple[int, ...] = (64, 128, 256, 512)
    fc_hidden: int = 128
    num_classes: int = 21
    weight_init_seed: int = 0
    kernel: int = 3
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(int(v) for v in self.conv_channels))
        if self.kernel != 3 or self.pool != 2:
            raise ValueError("only 3x3 kernels and 2x2 pooling are supported")
        _, h, w = self.input_shape
        div = 2 ** len(self.conv_channels)
        if h % div or w % div:
            raise ValueError(f"input {h}x{w} is not divisible by {div} for {len(self.conv_channels)} pools")

    @property
    def final_spatial(self) -> tuple[int, int]:
        div = 2 ** len(self.conv_channels)
        return self.input_shape[1] // div, self.input_shape[2] // div

    @property
    def flatten_size(self) -> int:
        h, w = self.final_spatial
        return self.conv_channels[-1] * h * w

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        in_ch = self.input_shape[0]
        for i, out_ch in enumerate(self.conv_channels):
            shapes[f"conv{i}.weight"] = (out_ch, in_ch, 3, 3)
            shapes[f"conv{i}.bias"] = (out_ch,)
            in_ch = out_ch
        shapes["fc.weight"] = (self.fc_hidden, self.flatten_size)
        shapes["fc.bias"] = (self.fc_hidden,)
        shapes["out.weight"] = (self.num_classes, self.fc_hidden)
        shapes["out.bias"] = (self.num_classes,)
        return shapes

    def to_json(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]
    token: int = field(default_factory=lambda: next(_tokens))

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype


def init_params(cfg: ModelConfig, dtype=np.float64) -> ModelParams:
    """He-uniform weights (bound sqrt(6 / fan_in)) and zero biases."""
    rng = np.random.default_rng(cfg.weight_init_seed)
    tensors = {}
    for name, shape in cfg.param_shapes().items():
        if name.endswith(".bias"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelParams(cfg, tensors)


# layer primitives

def _conv_forward(x, w, b):
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(2, 3))
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out.reshape(n, h, wd, -1).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, w, x_shape, need_dx=True):
    n, c, h, wd = x_shape
    dflat = dout.transpose(0, 2, 3, 1).reshape(n * h * wd, -1)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dflat @ w.reshape(w.shape[0], -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=dout.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, :, ki: ki + h, kj: kj + wd] += dcols[..., ki, kj].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _pool_forward(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    # np.argmax picks the first maximum: row-major tie-break inside each window
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    n, c, h, w = x_shape
    d = np.zeros(dout.shape + (4,), dtype=dout.dtype)
    np.put_along_axis(d, idx[..., None], dout[..., None], axis=-1)
    return d.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x_shape)


@dataclass(eq=False)
class ForwardCache:
    token: int
    blocks: list = field(default_factory=list)  # (x_shape, cols, relu_mask, pool_idx, pre_pool_shape)
    flat: np.ndarray | None = None
    flat_shape: tuple | None = None
    hidden: np.ndarray | None = None
    hidden_mask: np.ndarray | None = None


def forward(params: ModelParams, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    cfg = params.config
    x = np.asarray(batch, dtype=params.dtype)
    if x.ndim != 4 or x.shape[1:] != cfg.input_shape:
        raise ShapeMismatch(f"expected [B, {', '.join(map(str, cfg.input_shape))}], got {list(x.shape)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite values in input batch")
    cache = ForwardCache(params.token)
    for i in range(len(cfg.conv_channels)):
        z, cols = _conv_forward(x, params[f"conv{i}.weight"], params[f"conv{i}.bias"])
        mask = z > 0
        a = z * mask
        pooled, idx = _pool_forward(a)
        cache.blocks.append((x.shape, cols, mask, idx, a.shape))
        x = pooled
    cache.flat_shape = x.shape
    flat = x.reshape(x.shape[0], -1)
    cache.flat = flat
    h = flat @ params["fc.weight"].T + params["fc.bias"]
    cache.hidden_mask = h > 0
    h = h * cache.hidden_mask
    cache.hidden = h
    logits = h @ params["out.weight"].T + params["out.bias"]
    return logits, cache


def backward(params: ModelParams, cache: ForwardCache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the loss w.r.t. every parameter, given dLoss/dLogits."""
    if cache.token != params.token:
        raise StaleCache("cache was produced by a different parameter set")
    cfg = params.config
    dlogits = np.asarray(dlogits, dtype=params.dtype)
    grads = {
        "out.weight": dlogits.T @ cache.hidden,
        "out.bias": dlogits.sum(axis=0),
    }
    dh = (dlogits @ params["out.weight"]) * cache.hidden_mask
    grads["fc.weight"] = dh.T @ cache.flat
    grads["fc.bias"] = dh.sum(axis=0)
    dx = (dh @ params["fc.weight"]).reshape(cache.flat_shape)
    for i in reversed(range(len(cfg.conv_channels))):
        x_shape, cols, mask, idx, pre_shape = cache.blocks[i]
        da = _pool_backward(dx, idx, pre_shape) * mask
        dx, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = _conv_backward(
            da, cols, params[f"conv{i}.weight"], x_shape, need_dx=i > 0)
    return {k: grads[k] for k in params.tensors}


def sigmoid(x):
    """Logistic function, evaluated without overflow and kept strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    s = np.clip(s, _SIGMOID_LO, _SIGMOID_HI)
    return s if s.ndim else float(s)


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy of sigmoid(logits), fused for stability.

    Per element: ``max(x, 0) - x*p + log(1 + exp(-|x|))``. Returns the mean
    over all B*C elements and its gradient ``(sigmoid(x) - p) / (B*C)``.
    """
    x = np.asarray(logits, dtype=np.float64)
    p = np.asarray(targets, dtype=np.float64)
    if x.shape != p.shape:
        raise ShapeMismatch(f"logits {x.shape} vs targets {p.shape}")
    if not np.all((p == 0) | (p == 1)):
        raise InvalidTarget("targets must be 0 or 1")
    per = np.maximum(x, 0) - x * p + np.log1p(np.exp(-np.abs(x)))
    # sigmoid(x) - 1 == -sigmoid(-x); the right side avoids cancellation for large x
    grad = np.where(p == 1, -sigmoid(-x), sigmoid(x)) / x.size
    return float(per.mean()), grad


def predict_proba(params: ModelParams, batch: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = []
    for lo in range(0, len(batch), batch_size):
        logits, _ = forward(params, batch[lo: lo + batch_size])
        out.append(sigmoid(logits))
    if not out:
        return np.zeros((0, params.config.num_classes))
    return np.concatenate(out, axis=0)


def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    """b"SMCK", u32 JSON length, JSON header, then f32 LE tensors in declaration order."""
    header = json.dumps({"model": params.config.to_json(), "extra": extra or {}},
                        sort_keys=True).encode("utf-8")
    parts = [_CKPT_MAGIC, struct.pack("<I", len(header)), header]
    for name in params.config.param_shapes():
        parts.append(np.ascontiguousarray(params[name], dtype="<f4").tobytes())
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def load_checkpoint(path, expected: ModelConfig | None = None,
                    dtype=np.float64) -> tuple[ModelParams, dict]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if data[:4] != _CKPT_MAGIC:
        raise UnknownSchema(f"{path}: not a checkpoint")
    (hlen,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8: 8 + hlen].decode("utf-8"))
    cfg = ModelConfig.from_json(header["model"])
    if expected is not None and expected != cfg:
        raise ConfigMismatch(f"checkpoint config {cfg} does not match {expected}")
    pos = 8 + hlen
    tensors = {}
    for name, shape in cfg.param_shapes().items():
        count = int(np.prod(shape))
        if pos + 4 * count > len(data):
            raise UnknownSchema(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape).astype(dtype)
        pos += 4 * count
    if pos != len(data):
        raise UnknownSchema(f"{path}: {len(data) - pos} trailing bytes")
    return ModelParams(cfg, tensors), header.get("extra", {})
