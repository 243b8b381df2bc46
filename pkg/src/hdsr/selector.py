"""Dynamic-selection recognizer: split a string into connected components,
guess how many digits each holds, and route it to a matching classifier."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu
from sklearn.base import BaseEstimator

from ._validation import check_boxes, check_images, check_is_fitted, holdout_split, labels_from_boxes
from .detector.geometry import StringPrediction
from .imaging import fit_centered
from .losses import softmax, softmax_cross_entropy
from .nn import ArrayDataset, Network, NetworkSpec, TrainConfig, load_into, save_weights, train

log = logging.getLogger(__name__)

MAX_LENGTH = 4
SPECK_AREA = 4
FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
THRESHOLD_GRID = np.round(np.arange(0, 21) * 0.05, 2)
SINGLE, TWO_MAX, REJECTED = "single-classifier", "two-classifier-max", "rejected"


# -- class index mapping -------------------------------------------------

def class_index(label: str) -> int:
    """0-9 for one digit, 10-109 for two, 110-1109 for three."""
    n = len(label)
    if not 1 <= n <= 3 or not label.isdigit():
        raise ValueError(f"no class index for {label!r}")
    return (0, 10, 110)[n - 1] + int(label)


def index_label(index: int) -> str:
    if 0 <= index < 10:
        return str(index)
    if 10 <= index < 110:
        return f"{index - 10:02d}"
    if 110 <= index < 1110:
        return f"{index - 110:03d}"
    raise ValueError(f"class index {index} outside 0..1109")


# -- segmentation --------------------------------------------------------

@dataclass
class ComponentImage:
    raster: np.ndarray  # uint8 crop; other components blanked to background
    x: int
    y: int
    area: int

    @property
    def width(self):
        return self.raster.shape[1]

    @property
    def height(self):
        return self.raster.shape[0]


def binarize(image) -> np.ndarray:
    """Ink mask from a global Otsu threshold (dark ink)."""
    im = np.asarray(image)
    if im.min() == im.max():
        return np.zeros(im.shape, dtype=bool)
    return im <= threshold_otsu(im)


def _labels(image, speck_area):
    mask = binarize(image)
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    slices = ndimage.find_objects(labels)
    keep = [k for k in range(1, n + 1) if areas[k] >= speck_area]
    keep.sort(key=lambda k: (slices[k - 1][1].start, slices[k - 1][0].start))
    return labels, keep, slices, areas


def segment_components(image, speck_area=SPECK_AREA, margin=1) -> list[ComponentImage]:
    """4-connected ink components ordered by leftmost x, specks removed."""
    im = np.asarray(image)
    labels, keep, slices, areas = _labels(im, speck_area)
    out = []
    for k in keep:
        sy, sx = slices[k - 1]
        y0, y1 = max(sy.start - margin, 0), min(sy.stop + margin, im.shape[0])
        x0, x1 = max(sx.start - margin, 0), min(sx.stop + margin, im.shape[1])
        crop = np.full((y1 - y0, x1 - x0), 255, dtype=np.uint8)
        own = labels[y0:y1, x0:x1] == k
        crop[own] = im[y0:y1, x0:x1][own]
        out.append(ComponentImage(crop, x0, y0, int(areas[k])))
    return out


def component_labels(image, boxes, speck_area=SPECK_AREA):
    """Components of a string image with the digits each one holds.

    Every ground-truth box goes to the component owning most ink inside it.
    Returns ``[(ComponentImage, digits)]``; components that own no box get
    an empty digit string.
    """
    im = np.asarray(image)
    labels, keep, _, _ = _labels(im, speck_area)
    comps = segment_components(im, speck_area)
    owned = {k: [] for k in keep}
    for x, y, w, h, c in sorted(boxes, key=lambda b: b[0] + b[2] / 2):
        region = labels[int(y):int(np.ceil(y + h)), int(x):int(np.ceil(x + w))]
        counts = np.bincount(region.ravel(), minlength=labels.max() + 1)
        counts[0] = 0
        for k in range(len(counts)):
            if k not in owned:
                counts[k] = 0
        if counts.max() > 0:
            owned[int(counts.argmax())].append(str(int(c)))
    return [(comp, "".join(owned[k])) for comp, k in zip(comps, keep)]


# -- fusion --------------------------------------------------------------

@dataclass
class FusionOutcome:
    class_index: int | None
    label: str
    branch: str
    score: float
    scores: dict = field(default_factory=dict)  # length -> (best class index, best probability)

    @property
    def rejected(self):
        return self.branch == REJECTED


def _best(length, probs):
    k = int(np.argmax(probs))
    value = f"{k:0{length}d}"
    return class_index(value), float(probs[k])


def fuse(lout, outputs, threshold) -> FusionOutcome:
    """Combine the length posterior with the length-specific classifiers.

    ``lout`` is the 4-vector P(length = 1..4); ``outputs`` maps a length to
    its classifier's probability vector (missing or None when no classifier
    exists). If the top length probability is below ``threshold`` the more
    confident of the Top-1 and Top-2 length classifiers decides; otherwise the
    Top-1 length classifier alone. A needed but missing classifier rejects.
    """
    lout = np.asarray(lout, dtype=np.float64)
    if lout.shape != (MAX_LENGTH,):
        raise ValueError(f"length posterior must have {MAX_LENGTH} entries")
    order = np.argsort(-lout, kind="stable")
    top1, top2 = int(order[0]) + 1, int(order[1]) + 1
    two = lout[order[0]] < threshold
    needed = (top1, top2) if two else (top1,)
    scores = {}
    for n in needed:
        probs = outputs.get(n)
        if probs is None:
            return FusionOutcome(None, "", REJECTED, 0.0, scores)
        scores[n] = _best(n, np.asarray(probs))
    if two and scores[top2][1] > scores[top1][1]:
        idx, p = scores[top2]
        return FusionOutcome(idx, index_label(idx), TWO_MAX, p, scores)
    idx, p = scores[top1]
    return FusionOutcome(idx, index_label(idx), TWO_MAX if two else SINGLE, p, scores)


def assemble(outcomes) -> StringPrediction:
    """Concatenate per-component outcomes; any rejection flags the string."""
    label = "".join(o.label for o in outcomes)
    prob = float(np.prod([o.score for o in outcomes if not o.rejected])) if outcomes else 1.0
    return StringPrediction(label, prob, [], any(o.rejected for o in outcomes))


# -- classifiers ---------------------------------------------------------

def classifier_spec(height, width, n_classes, filters=(16, 32, 64)) -> NetworkSpec:
    layers = []
    for f in filters:
        layers += [
            {"type": "conv", "filters": f, "kernel": [3, 3], "stride": [1, 1], "padding": "same"},
            {"type": "maxpool", "window": [2, 2], "stride": [2, 2]},
            {"type": "batchnorm"},
            {"type": "leaky_relu", "slope": 0.1},
        ]
    layers += [{"type": "flatten"}, {"type": "dense", "units": n_classes}]
    return NetworkSpec((height, width, 1), layers)


class ComponentClassifier(BaseEstimator):
    """Small CNN over component crops centred in a fixed canvas."""

    def __init__(self, n_classes=10, height=32, width=64, filters=(16, 32, 64), batch_size=64,
                 momentum=0.9, weight_decay=5e-4, lr_initial=1e-3, lr_final=5e-4, patience=5,
                 max_epochs=30, clip_norm=None, warmup_steps=0, validation_fraction=0.1, random_state=0):
        self.n_classes = n_classes
        self.height = height
        self.width = width
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
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _tensor(self, X):
        return np.stack([fit_centered(im, self.height, 2, self.width)[..., None] for im in X])

    def fit(self, X, y):
        images = check_images(X)
        y = np.asarray(y, dtype=int)
        if len(y) != len(images):
            raise ValueError(f"{len(y)} targets for {len(images)} images")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"targets must lie in 0..{self.n_classes - 1}")
        x = self._tensor(images)
        tr, va = holdout_split(len(images), self.validation_fraction, self.random_state)
        if len(tr) == 0:
            tr = va
        self.net_ = Network(classifier_spec(self.height, self.width, self.n_classes, tuple(self.filters)),
                            seed=self.random_state)
        cfg = TrainConfig(self.batch_size, self.momentum, self.weight_decay, self.lr_initial, self.lr_final,
                          self.patience, self.max_epochs, self.random_state, self.clip_norm, self.warmup_steps)
        result = train(self.net_, ArrayDataset(x[tr], y[tr]), ArrayDataset(x[va], y[va]),
                       softmax_cross_entropy, cfg)
        self.history_ = result.history
        return self

    def predict_proba(self, X):
        check_is_fitted(self)
        return softmax(self.net_.predict(self._tensor(check_images(X))).astype(np.float64), axis=-1)

    def predict(self, X):
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))


# -- ensemble ------------------------------------------------------------

class SelectorEnsemble(BaseEstimator):
    """Length classifier plus one digit classifier per component length.

    ``fit(X, y)`` takes string images and their digit boxes. Components are
    labelled by the boxes they own; the fusion threshold is then chosen on
    the validation strings.
    """

    def __init__(self, use_c3=False, threshold=None, height=32, width=64, speck_area=SPECK_AREA,
                 max_epochs=30, lr_initial=1e-3, lr_final=5e-4, clip_norm=None, warmup_steps=0,
                 patience=5, validation_fraction=0.1, random_state=0):
        self.use_c3 = use_c3
        self.threshold = threshold
        self.height = height
        self.width = width
        self.speck_area = speck_area
        self.max_epochs = max_epochs
        self.lr_initial = lr_initial
        self.lr_final = lr_final
        self.clip_norm = clip_norm
        self.warmup_steps = warmup_steps
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _classifier(self, n_classes, seed_offset):
        return ComponentClassifier(n_classes, self.height, self.width, max_epochs=self.max_epochs,
                                   lr_initial=self.lr_initial, lr_final=self.lr_final, patience=self.patience,
                                   clip_norm=self.clip_norm, warmup_steps=self.warmup_steps,
                                   random_state=self.random_state + seed_offset)

    def fit(self, X, y, eval_set=None):
        images = check_images(X)
        boxes = check_boxes(y, len(images))
        if eval_set is None:
            tr, va = holdout_split(len(images), self.validation_fraction, self.random_state)
            val = ([images[i] for i in va], labels_from_boxes([boxes[i] for i in va]))
            images, boxes = [images[i] for i in tr], [boxes[i] for i in tr]
        else:
            vi = check_images(eval_set[0])
            vy = eval_set[1]
            val = (vi, [str(v) for v in vy] if len(vy) and isinstance(vy[0], str)
                   else labels_from_boxes(check_boxes(vy, len(vi))))

        crops, digits = [], []
        for im, bs in zip(images, boxes):
            for comp, lab in component_labels(im, bs, self.speck_area):
                if 1 <= len(lab) <= MAX_LENGTH:
                    crops.append(comp.raster)
                    digits.append(lab)
        if not crops:
            raise ValueError("no labelled components found in the training strings")
        lengths = np.array([len(d) for d in digits])
        self.length_counts_ = {n: int(np.sum(lengths == n)) for n in range(1, MAX_LENGTH + 1)}
        log.info("component lengths: %s", self.length_counts_)
        self.L_ = self._classifier(MAX_LENGTH, 0).fit(crops, lengths - 1)
        self.classifiers_ = {}
        for n in (1, 2, 3) if self.use_c3 else (1, 2):
            idx = np.flatnonzero(lengths == n)
            if len(idx) < 2:
                log.warning("too few %d-digit components to train a classifier", n)
                continue
            self.classifiers_[n] = self._classifier(10 ** n, n).fit(
                [crops[i] for i in idx], [int(digits[i]) for i in idx])
        self.net_ = self.L_.net_

        if self.threshold is None:
            self.threshold_, self.curve_ = tune_threshold(self, *val)
        else:
            self.threshold_ = float(self.threshold)
            self.curve_ = []
        return self

    def component_outputs(self, comps):
        """Length posteriors and per-length classifier outputs for components."""
        crops = [c.raster for c in comps]
        lout = self.L_.predict_proba(crops)
        outs = {n: clf.predict_proba(crops) for n, clf in self.classifiers_.items()}
        return lout, outs

    def _explain_cached(self, cached, threshold):
        lout, outs = cached
        return [fuse(lout[i], {n: o[i] for n, o in outs.items()}, threshold) for i in range(len(lout))]

    def _cache(self, images):
        cache = []
        for im in images:
            comps = segment_components(im, self.speck_area)
            cache.append(self.component_outputs(comps) if comps else (np.zeros((0, MAX_LENGTH)), {}))
        return cache

    def explain(self, image, threshold=None) -> list[FusionOutcome]:
        check_is_fitted(self)
        t = self.threshold_ if threshold is None else threshold
        return self._explain_cached(self._cache(check_images([image]))[0], t)

    def predict_strings(self, X, threshold=None) -> list[StringPrediction]:
        check_is_fitted(self)
        t = self.threshold_ if threshold is None else threshold
        return [assemble(self._explain_cached(c, t)) for c in self._cache(check_images(X))]

    def predict(self, X) -> list[str]:
        return [p.label for p in self.predict_strings(X)]

    def score(self, X, y):
        pred = self.predict(X)
        if len(y) and not isinstance(y[0], str):
            y = labels_from_boxes(check_boxes(y, len(pred)))
        return float(np.mean([p == str(t) for p, t in zip(pred, y)]))

    def save(self, directory):
        check_is_fitted(self)
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        meta = {"head": "selector", "params": self.get_params(), "lengths": sorted(self.classifiers_),
                "L": self.L_.get_params(), "networks": {"L": self.L_.net_.spec.to_json()}}
        save_weights(self.L_.net_, d / "L.hdsr")
        for n, clf in self.classifiers_.items():
            save_weights(clf.net_, d / f"C{n}.hdsr")
            meta["networks"][f"C{n}"] = clf.net_.spec.to_json()
            meta[f"C{n}"] = clf.get_params()
        with open(d / "config.json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_fusion(d / "fusion.txt", self.threshold_, self.curve_)

    @classmethod
    def load(cls, directory) -> "SelectorEnsemble":
        d = Path(directory)
        with open(d / "config.json") as fh:
            meta = json.load(fh)
        if meta.get("head") != "selector":
            raise ValueError(f"{d} does not hold a selector bundle")
        est = cls(**meta["params"])

        def restore(key, path):
            params = dict(meta[key])
            params["filters"] = tuple(params["filters"])
            clf = ComponentClassifier(**params)
            clf.net_ = load_into(Network(NetworkSpec.from_json(meta["networks"][key])), path)
            clf.history_ = []
            return clf

        est.L_ = restore("L", d / "L.hdsr")
        est.net_ = est.L_.net_
        est.classifiers_ = {n: restore(f"C{n}", d / f"C{n}.hdsr") for n in meta["lengths"]}
        est.threshold_, est.curve_ = read_fusion(d / "fusion.txt")
        return est


def tune_threshold(ensemble: SelectorEnsemble, images, labels, grid=THRESHOLD_GRID):
    """Scan the fusion threshold on validation strings.

    Returns ``(T, curve)`` where ``curve`` lists ``(T, accuracy)`` for every
    scanned value; the smallest T reaching the best accuracy wins.
    """
    images = check_images(images)
    labels = [str(v) for v in labels]
    if not labels:
        raise ValueError("validation set is empty")
    cache = ensemble._cache(images)
    curve = []
    for t in grid:
        preds = [assemble(ensemble._explain_cached(c, t)).label for c in cache]
        curve.append((float(t), float(np.mean([p == lab for p, lab in zip(preds, labels)]))))
    best = max(acc for _, acc in curve)
    chosen = next(t for t, acc in curve if acc == best)
    return chosen, curve


def write_fusion(path, threshold, curve):
    with open(path, "w") as fh:
        fh.write(f"T={threshold:.2f}\n")
        fh.write("threshold,accuracy\n")
        for t, acc in curve:
            fh.write(f"{t:.2f},{acc!r}\n")


def read_fusion(path):
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("T="):
        raise ValueError(f"{path}: missing threshold line")
    curve = [(float(a), float(b)) for a, b in (ln.split(",") for ln in lines[2:])]
    return float(lines[0][2:]), curve


def recognize_string_ds(image, ensemble: SelectorEnsemble) -> StringPrediction:
    return ensemble.predict_strings([image])[0]


__all__ = [
    "ComponentClassifier", "ComponentImage", "FusionOutcome", "SelectorEnsemble", "assemble", "binarize",
    "class_index", "component_labels", "fuse", "index_label", "read_fusion", "recognize_string_ds",
    "segment_components", "tune_threshold", "write_fusion",
]
