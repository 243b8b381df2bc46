"""Mini-batch SGD with momentum, weight decay, a linear learning-rate
schedule and early stopping on validation loss."""

from __future__ import annotations

import csv
import logging
import math
import os
import pickle
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import Network

log = logging.getLogger(__name__)


class NumericalError(FloatingPointError):
    """Raised on non-finite losses or gradients; carries the history so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class TrainConfig:
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_initial: float = 1e-3
    lr_final: float = 5e-4
    patience: int = 5
    max_epochs: int = 50
    rng_seed: int = 0
    clip_norm: float | None = None
    warmup_steps: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must not exceed lr_initial")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")

    def to_json(self):
        return asdict(self)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Linear interpolation from lr_initial (epoch 0) to lr_final (last epoch)."""
    if cfg.max_epochs == 1:
        return cfg.lr_initial
    frac = min(max(epoch / (cfg.max_epochs - 1), 0.0), 1.0)
    return cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * frac


def weight_decay_grad(w, decay):
    return decay * w


def clip_gradients(gradients, max_norm):
    """Rescale all gradients together so their global L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in gradients.values()))
    if math.isfinite(norm) and norm > max_norm:
        scale = max_norm / norm
        for key in gradients:
            gradients[key] = gradients[key] * scale
    return norm


def warmup_factor(cfg: TrainConfig, step: int) -> float:
    """Quartic ramp over the first ``warmup_steps`` updates (Darknet's burn-in)."""
    if cfg.warmup_steps <= 0 or step >= cfg.warmup_steps:
        return 1.0
    return ((step + 1) / cfg.warmup_steps) ** 4


def sgd_step(weights, gradients, velocity, cfg: TrainConfig, epoch: int, lr_scale: float = 1.0):
    """One in-place momentum step over parallel dicts of arrays.

    v <- momentum * v - lr * (g + decay * w);  w <- w + v
    """
    lr = learning_rate(cfg, epoch) * lr_scale
    for key, w in weights.items():
        g = gradients[key]
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericalError(f"non-finite gradient for {key}: {bad} of {np.size(g)} entries")
        v = velocity.get(key)
        if v is None:
            v = np.zeros_like(w)
        v = cfg.momentum * v - lr * (g + weight_decay_grad(w, cfg.weight_decay))
        velocity[key] = v.astype(w.dtype, copy=False)
        w += velocity[key]
    return weights, velocity


class ArrayDataset:
    def __init__(self, x, y):
        self.x = x
        self.y = y

    def __len__(self):
        return len(self.x)

    def batch(self, idx, rng=None, step=0):
        return self.x[idx], take(self.y, idx)


def take(y, idx):
    if isinstance(y, np.ndarray):
        return y[idx]
    return [y[i] for i in idx]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float


@dataclass
class TrainResult:
    weights: list
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    skipped: int = 0


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
        for r in history:
            w.writerow([r.epoch, repr(float(r.train_loss)), repr(float(r.val_loss)), repr(float(r.val_metric))])


def read_history(path):
    with open(path, newline="") as fh:
        return [
            EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]), float(r["val_metric"]))
            for r in csv.DictReader(fh)
        ]


def evaluate_loss(net: Network, data, loss_fn, batch_size):
    total, count = 0.0, 0
    for start in range(0, len(data), batch_size):
        idx = np.arange(start, min(start + batch_size, len(data)))
        x, y = data.batch(idx)
        loss, _ = loss_fn(net.forward(x), y)
        total += float(loss) * len(idx)
        count += len(idx)
    return total / max(count, 1)


def train(net: Network, train_data, val_data, loss_fn, cfg: TrainConfig, metric_fn=None,
          checkpoint=None, resume=False, epoch_callback=None) -> TrainResult:
    """Train ``net`` in place and return the best-validation-loss weights.

    ``loss_fn(outputs, targets) -> (mean_loss, d_mean_loss/d_outputs)``.
    Training stops once validation loss has failed to improve for more than
    ``cfg.patience`` consecutive epochs, or after ``cfg.max_epochs``.
    A checkpoint (if given) is rewritten after every epoch; ``resume=True``
    continues from it with results identical to an uninterrupted run.
    """
    if len(train_data) == 0 or len(val_data) == 0:
        raise ValueError("training and validation sets must be non-empty")
    velocity: dict = {}
    history: list[EpochRecord] = []
    best_val, best_weights, best_epoch, bad_epochs = math.inf, net.get_weights(), -1, 0
    start_epoch = 0
    if resume and checkpoint and os.path.exists(checkpoint):
        with open(checkpoint, "rb") as fh:
            state = pickle.load(fh)
        net.set_weights(state["weights"])
        velocity = state["velocity"]
        history = state["history"]
        best_val, best_weights = state["best_val"], state["best_weights"]
        best_epoch, bad_epochs = state["best_epoch"], state["bad_epochs"]
        start_epoch = state["epoch"] + 1
        if state.get("done"):
            return TrainResult(best_weights, history, best_epoch, state.get("stopped_early", False))

    stopped_early = False
    step = start_epoch * math.ceil(len(train_data) / cfg.batch_size)
    for epoch in range(start_epoch, cfg.max_epochs):
        rng = np.random.default_rng([cfg.rng_seed, 202, epoch])
        order = rng.permutation(len(train_data))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = train_data.batch(idx, rng, step)
            out = net.forward(x, training=True)
            loss, grad = loss_fn(out, y)
            if not math.isfinite(float(loss)):
                raise NumericalError(f"non-finite training loss at epoch {epoch}", history)
            net.backward(grad)
            weights = dict(net.parameters())
            grads = dict(net.gradients())
            if cfg.clip_norm is not None:
                clip_gradients(grads, cfg.clip_norm)
            try:
                sgd_step(weights, grads, velocity, cfg, epoch, warmup_factor(cfg, step))
            except NumericalError as exc:
                raise NumericalError(str(exc), history) from None
            total += float(loss) * len(idx)
            seen += len(idx)
            step += 1
        train_loss = total / seen
        val_loss = evaluate_loss(net, val_data, loss_fn, max(cfg.batch_size, 128))
        if not math.isfinite(val_loss):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}", history)
        val_metric = float(metric_fn(net)) if metric_fn is not None else float("nan")
        history.append(EpochRecord(epoch, train_loss, val_loss, val_metric))
        log.info("epoch %d lr %.2e train %.5f val %.5f metric %.4f", epoch,
                 learning_rate(cfg, epoch), train_loss, val_loss, val_metric)
        if val_loss < best_val:
            best_val, best_weights, best_epoch, bad_epochs = val_loss, net.get_weights(), epoch, 0
        else:
            bad_epochs += 1
        done = bad_epochs > cfg.patience or epoch == cfg.max_epochs - 1
        stopped_early = bad_epochs > cfg.patience
        if checkpoint:
            state = {
                "epoch": epoch, "weights": net.get_weights(), "velocity": velocity,
                "history": history, "best_val": best_val, "best_weights": best_weights,
                "best_epoch": best_epoch, "bad_epochs": bad_epochs, "done": done,
                "stopped_early": stopped_early,
            }
            tmp = f"{checkpoint}.tmp"
            with open(tmp, "wb") as fh:
                pickle.dump(state, fh)
            os.replace(tmp, checkpoint)
        if epoch_callback is not None:
            epoch_callback(epoch, history)
        if stopped_early:
            break
    net.set_weights(best_weights)
    return TrainResult(best_weights, history, best_epoch, stopped_early)
