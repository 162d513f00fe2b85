"""Dataset splitting, Adam, and the mini-batch training loop."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import model as M
from .errors import EmptySplit, NonFiniteLoss, ShapeMismatch, TooFewItems
from .features import FeatureConfig, FeatureMatrix, Standardization
from .metrics import EvalReport, evaluate_predictions


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5
    split: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0
    stratify: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "split", tuple(float(s) for s in self.split))
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValueError(f"split fractions {self.split} must be non-negative and sum to 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")

    def to_json(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_dataset(items, cfg: TrainConfig = TrainConfig(),
                  labels: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shuffle indices by seed into train/val/test of round(0.7n)/round(0.2n)/rest.

    With ``cfg.stratify`` the same proportions are applied inside each group
    of identical label vectors (requires ``labels``).
    """
    n = items if isinstance(items, (int, np.integer)) else len(items)
    if n < 10:
        raise TooFewItems(f"need at least 10 items to split, got {n}")
    rng = np.random.default_rng(cfg.seed)
    if not cfg.stratify:
        order = rng.permutation(n)
        n_train = _round_half_up(cfg.split[0] * n)
        n_val = _round_half_up(cfg.split[1] * n)
        return (np.sort(order[:n_train]), np.sort(order[n_train: n_train + n_val]),
                np.sort(order[n_train + n_val:]))
    if labels is None:
        raise ValueError("stratified split needs labels")
    groups: dict[bytes, list[int]] = {}
    for i, row in enumerate(np.asarray(labels, dtype=np.int8)):
        groups.setdefault(row.tobytes(), []).append(i)
    parts = ([], [], [])
    for key in sorted(groups):
        idx = rng.permutation(groups[key])
        a = _round_half_up(cfg.split[0] * len(idx))
        b = _round_half_up(cfg.split[1] * len(idx))
        parts[0].extend(idx[:a])
        parts[1].extend(idx[a: a + b])
        parts[2].extend(idx[a + b:])
    return tuple(np.sort(np.asarray(p, dtype=np.int64)) for p in parts)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: M.ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.tensors.items()},
                   {k: np.zeros_like(p) for k, p in params.tensors.items()}, 0)


def adam_step(params: M.ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> tuple[M.ModelParams, AdamState]:
    """One bias-corrected Adam update; returns new params and state."""
    b1, b2, lr, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.learning_rate, cfg.adam_eps
    t = state.t + 1
    new_t, new_m, new_v = {}, {}, {}
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient {name} {g.shape} vs parameter {p.shape}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_t[name] = (p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False)
        new_m[name], new_v[name] = m, v
    return M.ModelParams(params.config, new_t), AdamState(new_m, new_v, t)


@dataclass
class Dataset:
    """Network-ready tensors plus the split and normalization used to make them."""

    x: np.ndarray  # [N, 1, H, W]
    y: np.ndarray  # [N, C]
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    stats: Standardization | None = None
    class_names: list[str] = field(default_factory=list)
    names: list[str] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return self.y.shape[1]

    def subset(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[which]
        return self.x[idx], self.y[idx]


def build_dataset(matrices: Sequence[FeatureMatrix], labels: np.ndarray,
                  feature_cfg: FeatureConfig, train_cfg: TrainConfig,
                  class_names: Sequence[str] = (), names: Sequence[str] = ()) -> Dataset:
    """Split, fit standardization on the training part only, and shape inputs."""
    labels = np.asarray(labels, dtype=np.int8)
    tr, va, te = split_dataset(len(matrices), train_cfg, labels)
    if len(tr) == 0:
        raise EmptySplit("training split is empty")
    stats = feature_cfg.fit_stats([matrices[i] for i in tr])
    x = np.stack([feature_cfg.to_input(m, stats) for m in matrices])[:, None]
    return Dataset(x.astype(train_cfg.dtype), labels, tr, va, te, stats,
                   list(class_names), list(names))


def _mean_loss(params, x, y, batch_size=64) -> float:
    total = 0.0
    for lo in range(0, len(x), batch_size):
        logits, _ = M.forward(params, x[lo: lo + batch_size])
        loss, _ = M.bce_with_logits(logits, y[lo: lo + batch_size])
        total += loss * logits.size
    return total / (len(x) * y.shape[1])


def evaluate(params: M.ModelParams, x: np.ndarray, y: np.ndarray,
             threshold: float = 0.5) -> EvalReport:
    if len(x) == 0:
        raise EmptySplit("cannot evaluate an empty split")
    return evaluate_predictions(M.predict_proba(params, x), y, threshold)


def train(dataset: Dataset, model_cfg: M.ModelConfig, train_cfg: TrainConfig,
          sink: Callable[[dict], None] | None = None) -> tuple[M.ModelParams, list[dict]]:
    """Mini-batch Adam over the training split.

    History has one record per epoch (epoch 0 describes the initial
    parameters). The returned parameters are those of the record with the
    lowest validation loss.
    """
    x_tr, y_tr = dataset.subset("train")
    x_va, y_va = dataset.subset("val")
    if len(x_tr) == 0:
        raise EmptySplit("training split is empty")
    params = M.init_params(model_cfg, dtype=np.dtype(train_cfg.dtype))
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(train_cfg.seed)

    def record(epoch, train_loss):
        rec = {"epoch": epoch, "train_loss": train_loss, "steps": state.t}
        if len(x_va):
            rep = evaluate(params, x_va, y_va, train_cfg.threshold)
            rec.update(val_loss=_mean_loss(params, x_va, y_va),
                       val_accuracy=rep.elementwise_accuracy, val_macro_f1=rep.macro_f1)
        else:
            rec.update(val_loss=train_loss, val_accuracy=None, val_macro_f1=None)
        return rec

    history = [record(0, _mean_loss(params, x_tr, y_tr))]
    best = (history[0]["val_loss"], params)
    if sink:
        sink(history[0])
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(x_tr))
        total, count = 0.0, 0
        for b, lo in enumerate(range(0, len(order), train_cfg.batch_size)):
            idx = order[lo: lo + train_cfg.batch_size]
            logits, cache = M.forward(params, x_tr[idx])
            loss, dlogits = M.bce_with_logits(logits, y_tr[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(epoch, b, loss)
            grads = M.backward(params, cache, dlogits)
            params, state = adam_step(params, grads, state, train_cfg)
            total += loss * len(idx)
            count += len(idx)
        rec = record(epoch, total / count)
        history.append(rec)
        if rec["val_loss"] < best[0]:
            best = (rec["val_loss"], params)
        if sink:
            sink(rec)
    return best[1], history


def history_jsonl(history: list[dict]) -> str:
    return "".join(json.dumps(rec) + "\n" for rec in history)
