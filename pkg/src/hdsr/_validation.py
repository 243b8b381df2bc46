"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.exceptions import NotFittedError

from .corpus.types import DigitBox


def check_images(X) -> list[np.ndarray]:
    """Accept a list of 2-D uint8 rasters (or a 3-D uint8 stack)."""
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError("expected a sequence of images, got a single 2-D array")
    images = []
    for i, im in enumerate(X):
        im = np.asarray(im)
        if im.ndim != 2:
            raise ValueError(f"image {i} has shape {im.shape}; expected a 2-D grayscale raster")
        if im.dtype != np.uint8:
            if np.issubdtype(im.dtype, np.integer) and im.min() >= 0 and im.max() <= 255:
                im = im.astype(np.uint8)
            else:
                raise ValueError(f"image {i} must be uint8, got {im.dtype}")
        if im.size == 0:
            raise ValueError(f"image {i} is empty")
        images.append(im)
    if not images:
        raise ValueError("no images given")
    return images


def check_labels(y, n) -> list[str]:
    labels = [str(v) for v in y]
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for {n} images")
    for lab in labels:
        if not lab.isdigit():
            raise ValueError(f"label {lab!r} is not a digit string")
    return labels


def check_boxes(y, n) -> list[list[tuple]]:
    """Normalize per-image box lists to (x, y, w, h, class) tuples."""
    if len(y) != n:
        raise ValueError(f"{len(y)} box lists for {n} images")
    out = []
    for boxes in y:
        norm = []
        for b in boxes:
            if isinstance(b, DigitBox):
                norm.append((b.x, b.y, b.w, b.h, b.digit_class))
            elif isinstance(b, dict):
                norm.append((b["x"], b["y"], b["w"], b["h"], b["c"]))
            else:
                x, yy, w, h, c = b
                norm.append((x, yy, w, h, c))
        norm.sort(key=lambda t: t[0])
        out.append(norm)
    return out


def labels_from_boxes(boxes) -> list[str]:
    return ["".join(str(int(b[4])) for b in sorted(bs, key=lambda t: t[0] + t[2] / 2)) for bs in boxes]


def check_is_fitted(est, attr="net_"):
    if getattr(est, attr, None) is None:
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


def holdout_split(n, fraction, seed):
    """Deterministic (train_idx, val_idx) split used when no eval_set is given."""
    rng = np.random.default_rng([seed, 404])
    order = rng.permutation(n)
    k = max(1, int(round(n * fraction)))
    return np.sort(order[k:]), np.sort(order[:k])
