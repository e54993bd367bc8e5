"""Splitting, ROI sampling, regression losses, Adam, and the training loop."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .models import Model, ModelSpec, build
from .optics import DatasetManifest, HologramRecord
from .tensor import Tensor

__all__ = [
    "Loss", "TrainConfig", "AdamState", "Adam", "adam_step", "log_cosh_loss", "mse_loss",
    "mae_loss", "loss_fn", "split_dataset", "sample_rois", "roi_corners", "EpochRecord",
    "TrainResult", "TrainingDivergedError", "train", "write_history_csv", "read_history_csv",
    "ROI_SIZE",
]

ROI_SIZE = 128


class Loss(str, Enum):
    LOGCOSH = "logcosh"
    MSE = "mse"
    MAE = "mae"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 200
    rois_per_hologram: int = 64
    batch_size: int = 32
    loss: Loss = Loss.LOGCOSH
    split: tuple[float, float, float] = (0.70, 0.20, 0.10)
    seed: int = 0
    val_rois_per_hologram: int | None = None
    threads: int | None = 1
    normalize_targets: bool = True

    def __post_init__(self):
        object.__setattr__(self, "loss", Loss(self.loss))
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.rois_per_hologram < 1 or self.batch_size < 1:
            raise ValueError("rois_per_hologram and batch_size must be >= 1")
        if len(self.split) != 3 or min(self.split) < 0 or abs(sum(self.split) - 1) > 1e-9:
            raise ValueError(f"split fractions must be three non-negatives summing to 1, got {self.split}")

    @property
    def val_rois(self) -> int:
        return self.val_rois_per_hologram or self.rois_per_hologram

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"] = self.loss.value
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# losses

def _residual(pred, target) -> Tensor:
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred, dtype=np.float64))
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    if pred.size == 0:
        raise ValueError("loss needs at least one prediction")
    if np.isnan(pred.data).any() or np.isnan(target).any():
        raise ValueError("loss input contains NaN")
    return pred - Tensor(target)


def _reduce(x: Tensor, reduction: str) -> Tensor:
    if reduction == "sum":
        return T.sum_(x)
    if reduction == "mean":
        return T.mean(x)
    raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def log_cosh_loss(pred, target, reduction: str = "sum") -> Tensor:
    """sum_i log(cosh(pred_i - target_i)), overflow-safe; gradient tanh(r)."""
    return _reduce(T.log_cosh(_residual(pred, target)), reduction)


def mse_loss(pred, target, reduction: str = "sum") -> Tensor:
    r = _residual(pred, target)
    return _reduce(r * r, reduction)


def mae_loss(pred, target, reduction: str = "sum") -> Tensor:
    return _reduce(T.abs_(_residual(pred, target)), reduction)


_LOSSES = {Loss.LOGCOSH: log_cosh_loss, Loss.MSE: mse_loss, Loss.MAE: mae_loss}


def loss_fn(kind: Loss | str) -> Callable[..., Tensor]:
    return _LOSSES[Loss(kind)]


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[Tensor], **kw) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params],
                   [np.zeros_like(p.data) for p in params], **kw)


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState,
              lr: float) -> None:
    """One bias-corrected Adam update, in place.  NaN gradients abort before any write."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state lengths differ")
    for p, g in zip(params, grads):
        if g is not None and g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient; optimizer step aborted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        step = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = (p.data - step).astype(p.data.dtype, copy=False)


class Adam:
    def __init__(self, params: list[Tensor], lr: float = 1e-4, **kw):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.zeros_like(self.params, **kw)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# data

def split_dataset(manifest: DatasetManifest, fractions=(0.70, 0.20, 0.10), seed: int = 0):
    """Shuffle holograms by seed and cut into (train, val, test) manifests."""
    n = len(manifest)
    if n == 0:
        raise ValueError("cannot split an empty manifest")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three non-negatives summing to 1, got {fractions}")
    order = np.random.default_rng([seed, 0x5B1]).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = min(int(round(fractions[1] * n)), n - n_train)
    parts = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
    return tuple(manifest.subset(sorted(p.tolist())) for p in parts)


def roi_corners(shape: tuple[int, int], count: int, seed, size: int = ROI_SIZE) -> np.ndarray:
    """(count, 2) top-left corners drawn uniformly from [0, H-size] x [0, W-size]."""
    h, w = shape
    if h < size or w < size:
        raise ValueError(f"hologram {h}x{w} is smaller than the {size}x{size} ROI")
    rng = np.random.default_rng(seed)
    return np.stack([rng.integers(0, h - size + 1, count), rng.integers(0, w - size + 1, count)], 1)


def sample_rois(holo: HologramRecord | np.ndarray, count: int, seed, size: int = ROI_SIZE,
                dtype=np.float32) -> np.ndarray:
    """``count`` random size x size crops, pixels scaled to [0, 1]: (count, size, size)."""
    img = holo.as_float() if isinstance(holo, HologramRecord) else np.asarray(holo)
    corners = roi_corners(img.shape, count, seed, size)
    out = np.empty((count, size, size), dtype=dtype)
    for k, (r, c) in enumerate(corners):
        out[k] = img[r:r + size, c:c + size]
    return out


def _load_images(manifest: DatasetManifest) -> list[np.ndarray]:
    return [manifest.load_record(i).as_float().astype(np.float32) for i in range(len(manifest))]


def _roi_set(images, labels, count: int, seed: int, tag: int):
    """ROIs for every hologram; hologram i uses its own seed so content depends only on i."""
    xs, ys = [], []
    for i, (img, z) in enumerate(zip(images, labels)):
        xs.append(sample_rois(img, count, [seed, tag, i]))
        ys.append(np.full(count, z))
    return np.concatenate(xs), np.concatenate(ys)


# ---------------------------------------------------------------------------
# loop

@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    wall_seconds: float


class TrainingDivergedError(FloatingPointError):
    """Loss or gradient went non-finite; ``model`` holds the last good parameters."""

    def __init__(self, msg: str, model: Model, history: list[EpochRecord]):
        super().__init__(msg)
        self.model = model
        self.history = history


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    splits: tuple[DatasetManifest, DatasetManifest, DatasetManifest] = field(repr=False)


def _evaluate_loss(model: Model, x: np.ndarray, y: np.ndarray, loss, batch: int) -> float:
    """Per-ROI mean of the loss over a fixed set."""
    pred = model.predict(x, batch)
    if not np.all(np.isfinite(pred)):
        return math.nan
    return float(loss(pred, y, reduction="sum").item()) / len(y)


def train(spec: ModelSpec, dataset: DatasetManifest | tuple, cfg: TrainConfig,
          out_dir: str | Path | None = None,
          log: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train with Adam; keep the parameters of the best validation epoch.

    ``dataset`` is a manifest (split here by ``cfg.split``/``cfg.seed``) or
    a ready (train, val, test) triple.  Losses are reported as per-ROI means.
    """
    splits = dataset if isinstance(dataset, tuple) else split_dataset(dataset, cfg.split, cfg.seed)
    train_m, val_m = splits[0], splits[1]
    if len(train_m) == 0 or len(val_m) == 0:
        raise ValueError("train and validation splits must be non-empty")

    limit = threadpool_limits(cfg.threads) if cfg.threads else None
    try:
        return _train(spec, splits, cfg, out_dir, log)
    finally:
        if limit is not None:
            limit.restore_original_limits()


def _train(spec, splits, cfg, out_dir, log) -> TrainResult:
    train_m, val_m = splits[0], splits[1]
    train_img, val_img = _load_images(train_m), _load_images(val_m)
    train_z = np.array([r.z_h_um for r in train_m.records])
    val_z = np.array([r.z_h_um for r in val_m.records])

    if cfg.normalize_targets and spec.target_offset == 0.0 and spec.target_scale == 1.0:
        std = float(train_z.std())
        spec = replace(spec, target_offset=float(train_z.mean()), target_scale=std if std > 0 else 1.0)
    model = build(spec)
    params = model.parameters()
    opt = Adam(params, cfg.lr)
    loss = loss_fn(cfg.loss)

    val_x, val_y = _roi_set(val_img, val_z, cfg.val_rois, cfg.seed, 1)
    best_state = model.state_dict()
    best_val, best_epoch = _evaluate_loss(model, val_x, val_y, loss, cfg.batch_size), 0
    history: list[EpochRecord] = []
    t0 = time.perf_counter()

    for epoch in range(1, cfg.epochs + 1):
        x, y = _roi_set(train_img, train_z, cfg.rois_per_hologram, cfg.seed, 1000 + epoch)
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(len(y))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            opt.zero_grad()
            pred = model.forward(x[idx])
            if not np.all(np.isfinite(pred.data)):
                model.load_state_dict(best_state)
                raise TrainingDivergedError(f"non-finite prediction at epoch {epoch}", model, history)
            value = loss(pred, y[idx], reduction="mean")
            v = float(value.item())
            if not math.isfinite(v):
                model.load_state_dict(best_state)
                raise TrainingDivergedError(f"training loss became {v} at epoch {epoch}", model, history)
            value.backward()
            try:
                opt.step()
            except FloatingPointError as exc:
                model.load_state_dict(best_state)
                raise TrainingDivergedError(f"{exc} at epoch {epoch}", model, history) from exc
            total += v * len(idx)
        val = _evaluate_loss(model, val_x, val_y, loss, cfg.batch_size)
        if not math.isfinite(val):
            model.load_state_dict(best_state)
            raise TrainingDivergedError(f"validation loss became {val} at epoch {epoch}", model, history)
        rec = EpochRecord(epoch, total / len(y), val, time.perf_counter() - t0)
        history.append(rec)
        if log:
            log(rec)
        if val < best_val:
            best_val, best_epoch, best_state = val, epoch, model.state_dict()

    model.load_state_dict(best_state)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        model.save(out / "model.tnsr")
        write_history_csv(out / "history.csv", history)
        (out / "split.json").write_text(json.dumps(
            {name: [r.path for r in m.records] for name, m in zip(("train", "val", "test"), splits)},
            indent=1) + "\n")
    return TrainResult(model, history, best_epoch, best_val, splits)


def write_history_csv(path: str | Path, history: list[EpochRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "wall_seconds"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.wall_seconds:.3f}"])


def read_history_csv(path: str | Path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]),
                        float(r["wall_seconds"])) for r in rows]
