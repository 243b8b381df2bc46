"""Sequence transcription head: column features, recurrent encoding, collapse."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_images, check_is_fitted, check_labels, holdout_split
from .imaging import stretch
from .losses import BLANK, NUM_SYMBOLS, InfeasibleTargetError, sequence_loss_logits, softmax
from .nn import (
    GatedRecurrent,
    Network,
    NetworkSpec,
    ShapeError,
    TrainConfig,
    load_into,
    save_weights,
    train,
    write_history,
)

log = logging.getLogger(__name__)

BLANK_CHAR = "-"


def symbol_char(s: int) -> str:
    return BLANK_CHAR if int(s) == BLANK else str(int(s))


@dataclass
class Transcript:
    label: str
    frame_alignment: list[int] = field(default_factory=list)

    @property
    def alignment_string(self) -> str:
        return "".join(symbol_char(s) for s in self.frame_alignment)


def map_to_sequence(feature_map) -> np.ndarray:
    """(1, W, C) or batched (N, 1, W, C) feature maps to W column vectors."""
    fm = np.asarray(feature_map)
    if fm.ndim == 3:
        if fm.shape[0] != 1:
            raise ShapeError(f"feature map height must be 1, got {fm.shape[0]}")
        return fm[0]
    if fm.ndim == 4:
        if fm.shape[1] != 1:
            raise ShapeError(f"feature map height must be 1, got {fm.shape[1]}")
        return fm[:, 0]
    raise ShapeError(f"expected a (1, W, C) feature map, got shape {fm.shape}")


def encode_recurrent(seq, weights: dict, bidirectional=True) -> np.ndarray:
    """Run the gated recurrent cell over ``seq`` (T, F) or (N, T, F).

    ``weights`` holds ``Wz_f, Uz_f, bz_f, Wc_f, Uc_f, bc_f`` (and the ``_b``
    set when bidirectional).
    """
    x = np.asarray(seq, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3:
        raise ShapeError(f"expected a (T, F) sequence, got shape {np.shape(seq)}")
    hidden = np.shape(weights["Uz_f"])[0]
    layer = GatedRecurrent(hidden, bidirectional)
    for d in layer.directions:
        for name in ("Wz", "Wc"):
            if np.shape(weights[f"{name}_{d}"]) != (x.shape[2], hidden):
                raise ShapeError(f"{name}_{d} has shape {np.shape(weights[f'{name}_{d}'])}, "
                                 f"expected {(x.shape[2], hidden)}")
        for name in ("Uz", "Uc"):
            if np.shape(weights[f"{name}_{d}"]) != (hidden, hidden):
                raise ShapeError(f"{name}_{d} must be {hidden}x{hidden}")
        for name in ("Wz", "Uz", "bz", "Wc", "Uc", "bc"):
            layer.params[f"{name}_{d}"] = np.asarray(weights[f"{name}_{d}"], dtype=np.float64)
    out = layer.forward(x)
    return out[0] if single else out


def transcribe(symbols) -> Transcript:
    """Merge runs of repeated symbols, then drop blanks."""
    symbols = [int(s) for s in symbols]
    for s in symbols:
        if not 0 <= s <= BLANK:
            raise ValueError(f"symbol {s} outside 0..{BLANK}")
    out = []
    prev = None
    for s in symbols:
        if s != prev and s != BLANK:
            out.append(str(s))
        prev = s
    return Transcript("".join(out), symbols)


def greedy_decode(frames) -> tuple[Transcript, float]:
    """Best-path decoding; ties go to the lowest symbol index."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != NUM_SYMBOLS:
        raise ShapeError(f"expected (T, {NUM_SYMBOLS}) frames, got {frames.shape}")
    best = frames.argmax(axis=1)
    prob = float(np.prod(frames[np.arange(len(best)), best]))
    return transcribe(best), prob


def write_frame_dump(frames, path):
    """CSV with one row of per-symbol probabilities per frame."""
    frames = np.asarray(frames)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [symbol_char(s) for s in range(NUM_SYMBOLS)])
        for t, row in enumerate(frames):
            w.writerow([t] + [f"{v:.6f}" for v in row])


def crnn_spec(height=32, width=128, filters=(16, 32, 64, 64), hidden=48) -> NetworkSpec:
    """Small conv backbone whose height pools collapse the map to one row,
    followed by a bidirectional recurrent layer and per-frame symbol scores."""
    layers = []
    h, w = height, width
    for i, f in enumerate(filters):
        layers.append({"type": "conv", "filters": f, "kernel": [3, 3], "stride": [1, 1], "padding": "same"})
        if i < 3:
            layers.append({"type": "maxpool", "window": [2, 2], "stride": [2, 2]})
            h, w = h // 2, w // 2
        elif h > 1:
            layers.append({"type": "maxpool", "window": [2, 1], "stride": [2, 1]})
            h //= 2
        layers += [{"type": "batchnorm"}, {"type": "leaky_relu", "slope": 0.1}]
    while h > 1:
        layers.append({"type": "maxpool", "window": [2, 1], "stride": [2, 1]})
        h //= 2
    layers += [
        {"type": "map_to_sequence"},
        {"type": "recurrent", "hidden": hidden, "bidirectional": True},
        {"type": "dense", "units": NUM_SYMBOLS},
    ]
    return NetworkSpec((height, width, 1), layers)


def sequence_batch_loss(logits, labels):
    """Mean alignment loss over a batch of per-frame scores (N, T, 11)."""
    n = len(labels)
    total = 0.0
    grad = np.zeros(logits.shape, dtype=np.float64)
    for i, lab in enumerate(labels):
        loss, g = sequence_loss_logits(logits[i], lab)
        total += loss
        grad[i] = g
    return total / n, (grad / n).astype(logits.dtype)


def feasible(label: str, frames: int) -> bool:
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats <= frames


class _SequenceData:
    def __init__(self, x, labels):
        self.x = x
        self.labels = labels

    def __len__(self):
        return len(self.x)

    def batch(self, idx, rng=None, step=0):
        return self.x[idx], [self.labels[i] for i in idx]


def train_sequencer(manifest, net: Network, cfg: TrainConfig, validation=None, **train_kw):
    """Fit ``net`` on a manifest's train split (validation split for early stopping).

    Labels that cannot fit in the available frames are skipped with a warning.
    Returns the ``TrainResult``; ``net`` holds the best weights afterwards.
    """
    h, w, _ = net.input_shape
    frames = net.output_shape[0]

    def prepare(images, labels):
        keep = [i for i, lab in enumerate(labels) if feasible(lab, frames)]
        if len(keep) < len(labels):
            log.warning("skipping %d samples whose labels exceed %d frames", len(labels) - len(keep), frames)
        x = np.stack([stretch(images[i], h, w)[..., None] for i in keep]) if keep else np.zeros((0, h, w, 1))
        return _SequenceData(x.astype(np.float32), [labels[i] for i in keep]), len(labels) - len(keep)

    if validation is None:
        tr_images, tr_labels = manifest.images_and_labels("train")
        va_images, va_labels = manifest.images_and_labels("validation")
    else:
        tr_images, tr_labels = manifest
        va_images, va_labels = validation
    train_data, skipped_train = prepare(tr_images, tr_labels)
    val_data, skipped_val = prepare(va_images, va_labels)
    result = train(net, train_data, val_data, sequence_batch_loss, cfg, **train_kw)
    result.skipped = skipped_train + skipped_val
    return result


class SequenceRecognizer(BaseEstimator):
    """Stretches each string image to a fixed size and transcribes it
    frame by frame. ``fit(X, y)`` takes uint8 images and digit-string labels."""

    def __init__(self, input_height=32, input_width=128, filters=(16, 32, 64, 64), hidden=48,
                 batch_size=64, momentum=0.9, weight_decay=5e-4, lr_initial=1e-3, lr_final=5e-4,
                 patience=5, max_epochs=30, validation_fraction=0.1, random_state=0):
        self.input_height = input_height
        self.input_width = input_width
        self.filters = filters
        self.hidden = hidden
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_initial = lr_initial
        self.lr_final = lr_final
        self.patience = patience
        self.max_epochs = max_epochs
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(self.batch_size, self.momentum, self.weight_decay, self.lr_initial,
                           self.lr_final, self.patience, self.max_epochs, self.random_state)

    def fit(self, X, y, eval_set=None, checkpoint=None, resume=False, epoch_callback=None):
        images = check_images(X)
        labels = check_labels(y, len(images))
        if eval_set is None:
            tr, va = holdout_split(len(images), self.validation_fraction, self.random_state)
            val = ([images[i] for i in va], [labels[i] for i in va])
            images, labels = [images[i] for i in tr], [labels[i] for i in tr]
        else:
            vi = check_images(eval_set[0])
            val = (vi, check_labels(eval_set[1], len(vi)))
        spec = crnn_spec(self.input_height, self.input_width, tuple(self.filters), self.hidden)
        self.net_ = Network(spec, seed=self.random_state)
        result = train_sequencer((images, labels), self.net_, self._train_config(), validation=val,
                                 checkpoint=checkpoint, resume=resume, epoch_callback=epoch_callback)
        self.skipped_ = result.skipped
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    @property
    def n_frames(self):
        check_is_fitted(self)
        return self.net_.output_shape[0]

    def predict_frames(self, X) -> np.ndarray:
        """Per-frame symbol probabilities, shape (N, T, 11)."""
        check_is_fitted(self)
        images = check_images(X)
        x = np.stack([stretch(im, self.input_height, self.input_width)[..., None] for im in images])
        return softmax(self.net_.predict(x, batch_size=128).astype(np.float64), axis=-1)

    def decode(self, X) -> list[tuple[Transcript, float]]:
        return [greedy_decode(f) for f in self.predict_frames(X)]

    def predict(self, X) -> list[str]:
        return [t.label for t, _ in self.decode(X)]

    def score(self, X, y):
        pred = self.predict(X)
        return float(np.mean([p == str(t) for p, t in zip(pred, y)]))

    def loss(self, X, y) -> float:
        """Mean alignment loss of ``y`` under the current network."""
        images = check_images(X)
        labels = check_labels(y, len(images))
        logp = np.log(np.clip(self.predict_frames(images), 1e-300, None))
        total = 0.0
        for lp, lab in zip(logp, labels):
            try:
                total += sequence_loss_logits(lp, lab)[0]
            except InfeasibleTargetError:
                total += np.inf
        return total / len(labels)

    def save(self, directory):
        check_is_fitted(self)
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        params = self.get_params()
        params["filters"] = list(self.filters)
        meta = {"head": "sequencer", "params": params, "network": self.net_.spec.to_json(),
                "best_epoch": self.best_epoch_}
        with open(d / "config.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        save_weights(self.net_, d / "weights.hdsr")
        write_history(self.history_, d / "history.csv")

    @classmethod
    def load(cls, directory) -> "SequenceRecognizer":
        d = Path(directory)
        with open(d / "config.json") as fh:
            meta = json.load(fh)
        if meta.get("head") != "sequencer":
            raise ValueError(f"{d} does not hold a sequencer bundle")
        params = dict(meta["params"])
        params["filters"] = tuple(params["filters"])
        est = cls(**params)
        est.net_ = load_into(Network(NetworkSpec.from_json(meta["network"])), d / "weights.hdsr")
        est.history_ = []
        est.best_epoch_ = meta.get("best_epoch", -1)
        return est


__all__ = [
    "BLANK_CHAR", "SequenceRecognizer", "Transcript", "crnn_spec", "encode_recurrent", "feasible",
    "greedy_decode", "map_to_sequence", "sequence_batch_loss", "symbol_char", "train_sequencer",
    "transcribe", "write_frame_dump",
]
