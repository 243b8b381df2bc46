"""Grid digit detector with a scikit-learn style interface."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .._validation import check_boxes, check_images, check_is_fitted, holdout_split, labels_from_boxes
from ..imaging import fit_to_canvas
from ..nn import Network, NetworkSpec, TrainConfig, load_into, save_weights, train, write_history
from .anchors import AnchorSet, cluster_anchors
from .geometry import Detection, StringPrediction, detections_to_string, nms
from .grid import FIELDS, GridConfig, decode_grid, detector_loss, encode_targets

log = logging.getLogger(__name__)


def darknet_tiny_spec(input_height, input_width, outputs, filters=(16, 32, 64, 64)) -> NetworkSpec:
    """Reduced Darknet-style backbone: 3x3 conv blocks with 2x2 pooling
    (pooled before normalization to cut elementwise work), then a 1x1 head."""
    layers = []
    for i, f in enumerate(filters):
        layers.append({"type": "conv", "filters": f, "kernel": [3, 3], "stride": [1, 1], "padding": "same"})
        if i < len(filters) - 1:
            layers.append({"type": "maxpool", "window": [2, 2], "stride": [2, 2]})
        layers += [{"type": "batchnorm"}, {"type": "leaky_relu", "slope": 0.1}]
    layers.append({"type": "conv", "filters": outputs, "kernel": [1, 1], "stride": [1, 1], "padding": "same"})
    return NetworkSpec((input_height, input_width, 1), layers)


class _DetectorData:
    """Training batches; optionally rescales content every ten batches."""

    def __init__(self, images, boxes, grid, anchors, multiscale=False, extra_positive_iou=None):
        self.images = images
        self.boxes = boxes
        self.grid = grid
        self.anchors = anchors
        self.multiscale = multiscale
        self.extra_positive_iou = extra_positive_iou
        self.x, self.t, self.collisions = _prepare(images, boxes, grid, anchors, extra_positive_iou)

    def __len__(self):
        return len(self.images)

    def batch(self, idx, rng=None, step=0):
        if not self.multiscale or rng is None:
            return self.x[idx], self.t[idx]
        factor = np.random.default_rng([step // 10, 505]).choice([0.7, 0.8, 0.9, 1.0])
        xs, ts = [], []
        for i in idx:
            h, w = self.images[i].shape
            base = min(self.grid.input_height / h, self.grid.input_width / w)
            ink, scale = fit_to_canvas(self.images[i], self.grid.input_height, self.grid.input_width,
                                       scale=base * factor)
            xs.append(ink[..., None])
            ts.append(encode_targets(_scale_boxes(self.boxes[i], scale), self.grid, self.anchors,
                                      self.extra_positive_iou).tensor)
        return np.stack(xs), np.stack(ts)


def _scale_boxes(boxes, s):
    return [(x * s, y * s, w * s, h * s, c) for x, y, w, h, c in boxes]


def _prepare(images, boxes, grid, anchors, extra_positive_iou=None):
    xs = np.zeros((len(images), grid.input_height, grid.input_width, 1), dtype=np.float32)
    ts = np.zeros((len(images), grid.cells_y, grid.cells_x, grid.boxes_per_cell, FIELDS), dtype=np.float32)
    collisions = 0
    for i, im in enumerate(images):
        ink, scale = fit_to_canvas(im, grid.input_height, grid.input_width)
        xs[i, ..., 0] = ink
        if boxes is not None:
            enc = encode_targets(_scale_boxes(boxes[i], scale), grid, anchors, extra_positive_iou)
            ts[i] = enc.tensor
            collisions += enc.collisions
    return xs, ts, collisions


CONF_GRID = np.round(np.arange(1, 20) * 0.05, 2)


def tune_confidence(raw, labels, grid: GridConfig, anchors: AnchorSet, nms_iou: float, thresholds=CONF_GRID):
    """Scan confidence thresholds on validation outputs.

    Returns ``(threshold, curve)`` with ``curve`` the ``(threshold, exact-match
    accuracy)`` pairs; the smallest threshold reaching the best accuracy wins.
    """
    if not len(labels):
        raise ValueError("validation set is empty")
    lowest = float(min(thresholds))
    dets = [decode_grid(r, grid, anchors, threshold=lowest) for r in raw]
    curve = []
    for t in thresholds:
        hits = 0
        for ds, lab in zip(dets, labels):
            kept = nms([d for d in ds if d.score >= t], nms_iou)
            hits += detections_to_string(kept).label == lab
        curve.append((float(t), hits / len(labels)))
    best = max(acc for _, acc in curve)
    return next(t for t, acc in curve if acc == best), curve


class DigitStringDetector(BaseEstimator):
    """Single-scale grid detector that reads digit strings left to right.

    ``fit(X, y)`` takes grayscale uint8 string images and, per image, a list
    of digit boxes (``DigitBox``, ``{c,x,y,w,h}`` dicts or
    ``(x, y, w, h, class)`` tuples). ``predict`` returns digit strings.
    """

    def __init__(self, cells_x=12, cells_y=4, input_height=32, input_width=96, n_anchors=3,
                 anchors=None, conf_threshold=0.5, nms_iou=0.45, objectness="focal", alpha=0.25,
                 gamma=2.0, box_weight=5.0, filters=(16, 32, 64, 64), batch_size=64, momentum=0.9,
                 weight_decay=5e-4, lr_initial=1e-3, lr_final=5e-4, patience=5, max_epochs=30, clip_norm=None, warmup_steps=0,
                 multiscale=False, extra_positive_iou=0.6, objectness_prior=0.01, tune_conf=True,
                 validation_fraction=0.1, random_state=0):
        self.cells_x = cells_x
        self.cells_y = cells_y
        self.input_height = input_height
        self.input_width = input_width
        self.n_anchors = n_anchors
        self.anchors = anchors
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.objectness = objectness
        self.alpha = alpha
        self.gamma = gamma
        self.box_weight = box_weight
        self.filters = filters
        self.batch_size = batch_size
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_initial = lr_initial
        self.lr_final = lr_final
        self.patience = patience
        self.max_epochs = max_epochs
        self.clip_norm = clip_norm
        self.warmup_steps = warmup_steps
        self.multiscale = multiscale
        self.extra_positive_iou = extra_positive_iou
        self.objectness_prior = objectness_prior
        self.tune_conf = tune_conf
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _grid(self, conf=None):
        conf = self.conf_threshold if conf is None else conf
        return GridConfig(self.cells_x, self.cells_y, self.n_anchors, conf, self.nms_iou,
                          self.input_height, self.input_width)

    def _train_config(self):
        return TrainConfig(self.batch_size, self.momentum, self.weight_decay, self.lr_initial,
                           self.lr_final, self.patience, self.max_epochs, self.random_state,
                           self.clip_norm, self.warmup_steps)

    def _estimate_anchors(self, images, boxes):
        shapes = []
        for im, bs in zip(images, boxes):
            _, scale = fit_to_canvas(im, self.input_height, self.input_width)
            for x, y, w, h, c in bs:
                shapes.append((w / h, h * scale / self.input_height))
        # the reference procedure clusters at most 10,000 ground-truth boxes
        shapes = np.array(shapes[:10000])
        return cluster_anchors(shapes, self.n_anchors, seed=self.random_state)

    def fit(self, X, y, eval_set=None, checkpoint=None, resume=False, epoch_callback=None):
        images = check_images(X)
        boxes = check_boxes(y, len(images))
        if eval_set is None:
            tr, va = holdout_split(len(images), self.validation_fraction, self.random_state)
            val_images = [images[i] for i in va]
            val_boxes = [boxes[i] for i in va]
            images = [images[i] for i in tr]
            boxes = [boxes[i] for i in tr]
        else:
            val_images = check_images(eval_set[0])
            val_boxes = check_boxes(eval_set[1], len(val_images))

        if self.anchors is None:
            self.anchors_ = self._estimate_anchors(images, boxes)
        elif isinstance(self.anchors, AnchorSet):
            self.anchors_ = self.anchors
        else:
            self.anchors_ = AnchorSet([tuple(a) for a in self.anchors])
        self.grid_ = self._grid()
        spec = darknet_tiny_spec(self.input_height, self.input_width, self.n_anchors * FIELDS, tuple(self.filters))
        self.net_ = Network(spec, seed=self.random_state)
        # near-zero head weights keep early box offsets small; objectness starts
        # at a low prior so empty slots do not swamp the first updates
        self.net_.layers[-1].params["W"] *= 0.01
        head_b = self.net_.layers[-1].params["b"]
        head_b[0::FIELDS] = -np.log((1 - self.objectness_prior) / self.objectness_prior)
        train_data = _DetectorData(images, boxes, self.grid_, self.anchors_, self.multiscale, self.extra_positive_iou)
        val_data = _DetectorData(val_images, val_boxes, self.grid_, self.anchors_, False, self.extra_positive_iou)
        self.collisions_ = train_data.collisions
        if self.collisions_:
            log.warning("%d ground-truth boxes lost to grid collisions", self.collisions_)

        grid = self.grid_

        def loss_fn(out, targets):
            return detector_loss(out, targets, grid, self.objectness, self.alpha, self.gamma, self.box_weight)

        result = train(self.net_, train_data, val_data, loss_fn, self._train_config(),
                       checkpoint=checkpoint, resume=resume, epoch_callback=epoch_callback)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.conf_threshold_ = self.conf_threshold
        self.conf_curve_ = []
        if self.tune_conf:
            raw = self.net_.predict(val_data.x, batch_size=128)
            self.conf_threshold_, self.conf_curve_ = tune_confidence(
                raw, labels_from_boxes(val_boxes), self.grid_, self.anchors_, self.nms_iou)
            log.info("confidence threshold %.2f (validation accuracy %.4f)", self.conf_threshold_,
                     dict(self.conf_curve_)[self.conf_threshold_])
        self.grid_ = self._grid(self.conf_threshold_)
        return self

    def set_thresholds(self, conf=None, nms_iou=None):
        """Override the fitted confidence and/or NMS thresholds."""
        check_is_fitted(self)
        if conf is not None:
            self.conf_threshold_ = float(conf)
        if nms_iou is not None:
            self.nms_iou = float(nms_iou)
        self.grid_ = self._grid(self.conf_threshold_)
        return self

    def _forward(self, images):
        check_is_fitted(self)
        x, _, _ = _prepare(images, None, self.grid_, self.anchors_)
        return self.net_.predict(x, batch_size=128), x

    def raw_output(self, X):
        return self._forward(check_images(X))[0]

    def detect(self, X) -> list[list[Detection]]:
        """Post-NMS detections per image, in source-image pixel coordinates."""
        images = check_images(X)
        raw, _ = self._forward(images)
        out = []
        for im, r in zip(images, raw):
            _, scale = fit_to_canvas(im, self.input_height, self.input_width)
            dets = nms(decode_grid(r, self.grid_, self.anchors_), self.nms_iou)
            out.append([Detection(d.x / scale, d.y / scale, d.w / scale, d.h / scale, d.digit_class, d.score)
                        for d in dets])
        return out

    def predict_strings(self, X) -> list[StringPrediction]:
        return [detections_to_string(d) for d in self.detect(X)]

    def predict(self, X) -> list[str]:
        return [p.label for p in self.predict_strings(X)]

    def score(self, X, y):
        """Exact-match string accuracy; ``y`` holds labels or box lists."""
        pred = self.predict(X)
        if len(y) and not isinstance(y[0], str):
            y = labels_from_boxes(check_boxes(y, len(pred)))
        return float(np.mean([p == str(t) for p, t in zip(pred, y)]))

    def save(self, directory):
        check_is_fitted(self)
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        params = self.get_params()
        params["anchors"] = [list(a) for a in self.anchors_.anchors]
        params["filters"] = list(self.filters)
        meta = {"head": "detector", "params": params, "network": self.net_.spec.to_json(),
                "best_epoch": self.best_epoch_, "conf_threshold": self.conf_threshold_,
                "conf_curve": self.conf_curve_}
        with open(d / "config.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        save_weights(self.net_, d / "weights.hdsr")
        self.anchors_.save(d / "anchors.json")
        write_history(self.history_, d / "history.csv")

    @classmethod
    def load(cls, directory) -> "DigitStringDetector":
        d = Path(directory)
        with open(d / "config.json") as fh:
            meta = json.load(fh)
        if meta.get("head") != "detector":
            raise ValueError(f"{d} does not hold a detector bundle")
        params = dict(meta["params"])
        params["filters"] = tuple(params["filters"])
        est = cls(**params)
        est.anchors_ = AnchorSet([tuple(a) for a in params["anchors"]])
        est.conf_threshold_ = meta.get("conf_threshold", est.conf_threshold)
        est.conf_curve_ = [tuple(c) for c in meta.get("conf_curve", [])]
        est.grid_ = est._grid(est.conf_threshold_)
        est.net_ = load_into(Network(NetworkSpec.from_json(meta["network"])), d / "weights.hdsr")
        est.history_ = []
        est.best_epoch_ = meta.get("best_epoch", -1)
        return est
