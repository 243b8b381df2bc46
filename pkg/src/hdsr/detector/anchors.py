"""Anchor shapes estimated by k-means under a 1 - IoU distance."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AnchorSet:
    """Anchor shapes as (aspect ratio w/h, height as a fraction of image height)."""

    anchors: list[tuple[float, float]]
    cost_history: list[float] = field(default_factory=list, compare=False)

    def __post_init__(self):
        if not self.anchors:
            raise ValueError("anchor set must be non-empty")
        self.anchors = [(float(r), float(h)) for r, h in self.anchors]
        if any(r <= 0 or h <= 0 for r, h in self.anchors):
            raise ValueError("anchor ratios and heights must be positive")

    def __len__(self):
        return len(self.anchors)

    @property
    def ratios(self):
        return [r for r, _ in self.anchors]

    def pixel_sizes(self, image_height):
        """(w, h) of each anchor in pixels for a given network input height."""
        return np.array([(r * hf * image_height, hf * image_height) for r, hf in self.anchors])

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({"anchors": [list(a) for a in self.anchors]}, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "AnchorSet":
        with open(path) as fh:
            return cls([tuple(a) for a in json.load(fh)["anchors"]])


def box_shapes(boxes, image_heights) -> np.ndarray:
    """Normalized (ratio, height fraction) for DigitBox-like objects."""
    heights = np.broadcast_to(np.asarray(image_heights, dtype=float), (len(boxes),))
    return np.array([(b.w / b.h, b.h / ih) for b, ih in zip(boxes, heights)], dtype=float)


def shape_iou(wh, centroids):
    """IoU of co-centred boxes; ``wh`` (n, 2), ``centroids`` (k, 2) -> (n, k)."""
    inter = np.minimum(wh[:, None, 0], centroids[None, :, 0]) * np.minimum(wh[:, None, 1], centroids[None, :, 1])
    union = (wh[:, 0] * wh[:, 1])[:, None] + (centroids[:, 0] * centroids[:, 1])[None, :] - inter
    return inter / union


def _cost(wh, centroids, assign):
    return float((1.0 - shape_iou(wh, centroids)[np.arange(len(wh)), assign]).sum())


def _kmeans_once(wh, k, rng, max_iter):
    n = len(wh)
    centroids = [wh[rng.integers(n)]]
    for _ in range(1, k):
        d = (1.0 - shape_iou(wh, np.array(centroids))).min(axis=1)
        d = np.clip(d, 0, None) ** 2
        if d.sum() == 0:
            centroids.append(wh[rng.integers(n)])
        else:
            centroids.append(wh[rng.choice(n, p=d / d.sum())])
    centroids = np.array(centroids, dtype=float)
    assign = shape_iou(wh, centroids).argmax(axis=1)
    history = [_cost(wh, centroids, assign)]
    for _ in range(max_iter):
        # update step: move a centroid to its members' mean only if that helps
        for j in range(k):
            members = wh[assign == j]
            if len(members) == 0:
                continue
            cand = members.mean(axis=0)
            old = (1.0 - shape_iou(members, centroids[j:j + 1])).sum()
            new = (1.0 - shape_iou(members, cand[None])).sum()
            if new < old:
                centroids[j] = cand
        new_assign = shape_iou(wh, centroids).argmax(axis=1)
        history.append(_cost(wh, centroids, new_assign))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centroids, history


def cluster_anchors(shapes, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 100) -> AnchorSet:
    """k-means over (ratio, height fraction) pairs.

    Distances are 1 - IoU between co-centred normalized boxes. The best of
    ``n_init`` seeded restarts is returned; its per-iteration cost is kept in
    ``cost_history`` and never increases.
    """
    shapes = np.asarray(shapes, dtype=float).reshape(-1, 2)
    if len(shapes) == 0:
        raise ValueError("no boxes to cluster")
    if k < 1:
        raise ValueError("k must be >= 1")
    distinct = np.unique(shapes, axis=0)
    if k > len(distinct):
        raise ValueError(f"k={k} exceeds the {len(distinct)} distinct box shapes")
    # canonical order makes the result independent of input order
    shapes = shapes[np.lexsort((shapes[:, 1], shapes[:, 0]))]
    wh = np.stack([shapes[:, 0] * shapes[:, 1], shapes[:, 1]], axis=1)
    rng = np.random.default_rng([seed, 303])
    best = None
    for _ in range(n_init):
        centroids, history = _kmeans_once(wh, k, rng, max_iter)
        if best is None or history[-1] < best[1][-1]:
            best = (centroids, history)
    centroids, history = best
    anchors = sorted((w / h, h) for w, h in centroids)
    return AnchorSet(anchors, history)
