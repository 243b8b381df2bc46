"""Box overlap, non-maximum suppression and string assembly."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    w: float
    h: float
    digit_class: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("detection box must have positive size")

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2

    @property
    def box(self):
        return (self.x, self.y, self.w, self.h)

    def to_json(self) -> dict:
        return {"c": self.digit_class, "x": self.x, "y": self.y, "w": self.w, "h": self.h,
                "score": self.score}

    @classmethod
    def from_json(cls, d) -> "Detection":
        return cls(float(d["x"]), float(d["y"]), float(d["w"]), float(d["h"]), int(d["c"]),
                   float(d["score"]))


@dataclass
class StringPrediction:
    label: str
    probability: float
    detections: list = field(default_factory=list)
    rejected: bool = False


def iou(a, b) -> float:
    """IoU of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (aw * ah + bw * bh - inter)


def iou_matrix(boxes_a, boxes_b) -> np.ndarray:
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2])
    y2 = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    return inter / union


def rank_order(dets):
    """Descending score, then ascending left edge, then ascending class."""
    return sorted(dets, key=lambda d: (-d.score, d.x, d.digit_class, d.y))


def nms(dets, iou_threshold: float):
    """Greedy class-agnostic suppression; output in rank order."""
    kept = []
    for d in rank_order(dets):
        if all(iou(d.box, k.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def detections_to_string(dets) -> StringPrediction:
    """Read detections left to right; probability is the product of scores."""
    if not dets:
        log.debug("empty detection list -> empty label")
        return StringPrediction("", 1.0, [])
    ordered = sorted(dets, key=lambda d: (d.center_x, d.x, -d.score, d.digit_class))
    label = "".join(str(d.digit_class) for d in ordered)
    prob = math.prod(d.score for d in ordered)
    return StringPrediction(label, prob, ordered)
