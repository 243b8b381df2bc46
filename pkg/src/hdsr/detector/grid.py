"""Grid target encoding, raw-output decoding and the detector loss.

Raw network output per cell is ``boxes_per_cell`` groups of
``[objectness, tx, ty, tw, th, class_0 .. class_9]`` (pre-activation).
Box centres are ``(cell + sigmoid(t)) * stride``; sizes are
``anchor * exp(t)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..losses import binary_objectness_loss, softmax
from ..nn.layers import sigmoid
from .anchors import AnchorSet
from .geometry import Detection

NUM_CLASSES = 10
FIELDS = 5 + NUM_CLASSES


@dataclass
class GridConfig:
    cells_x: int = 12
    cells_y: int = 4
    boxes_per_cell: int = 3
    confidence_threshold: float = 0.5
    nms_iou_threshold: float = 0.45
    input_height: int = 32
    input_width: int = 96

    def __post_init__(self):
        if self.cells_x < 1 or self.cells_y < 1 or self.boxes_per_cell < 1:
            raise ValueError("grid cells and boxes_per_cell must be >= 1")
        for name in ("confidence_threshold", "nms_iou_threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")

    @property
    def stride_x(self) -> float:
        return self.input_width / self.cells_x

    @property
    def stride_y(self) -> float:
        return self.input_height / self.cells_y

    @property
    def raw_shape(self):
        return (self.cells_y, self.cells_x, self.boxes_per_cell * FIELDS)

    def to_json(self):
        return asdict(self)


@dataclass
class EncodedTargets:
    tensor: np.ndarray  # (cells_y, cells_x, A, FIELDS)
    collisions: int = 0


def _check_anchors(grid: GridConfig, anchors: AnchorSet):
    if len(anchors) != grid.boxes_per_cell:
        raise ValueError(f"{len(anchors)} anchors for {grid.boxes_per_cell} boxes per cell")


def _fill(t, i, j, a, grid, a_wh, cx, cy, w, h, c):
    t[i, j, a] = 0
    t[i, j, a, 0] = 1
    t[i, j, a, 1] = cx / grid.stride_x - j
    t[i, j, a, 2] = cy / grid.stride_y - i
    t[i, j, a, 3] = np.log(w / a_wh[a, 0])
    t[i, j, a, 4] = np.log(h / a_wh[a, 1])
    t[i, j, a, 5 + int(c)] = 1


def encode_targets(boxes, grid: GridConfig, anchors: AnchorSet, extra_positive_iou=None) -> EncodedTargets:
    """Assign each box (x, y, w, h, class) in network-input pixels to a grid slot.

    A box goes to the cell holding its centre and its best-IoU anchor; if that
    slot is taken the next-best free anchor of the same cell is used, and
    only when the cell is full is the smaller box dropped (counted as a
    collision).

    With ``extra_positive_iou`` set, every still-free anchor of that cell whose
    shape IoU with the box reaches the threshold is also made a positive for
    it. Near-identical anchors then stop competing for the same digit; NMS
    removes the duplicate detections.
    """
    _check_anchors(grid, anchors)
    a_wh = anchors.pixel_sizes(grid.input_height)
    t = np.zeros((grid.cells_y, grid.cells_x, grid.boxes_per_cell, FIELDS), dtype=np.float32)
    area = np.zeros((grid.cells_y, grid.cells_x, grid.boxes_per_cell))
    collisions = 0
    extras = []
    for x, y, w, h, c in boxes:
        if w <= 0 or h <= 0:
            raise ValueError("box must have positive size")
        cx, cy = x + w / 2, y + h / 2
        if not (0 <= cx <= grid.input_width and 0 <= cy <= grid.input_height):
            raise ValueError(f"box centre ({cx}, {cy}) outside the network input")
        j = min(int(cx / grid.stride_x), grid.cells_x - 1)
        i = min(int(cy / grid.stride_y), grid.cells_y - 1)
        inter = np.minimum(w, a_wh[:, 0]) * np.minimum(h, a_wh[:, 1])
        ious = inter / (w * h + a_wh[:, 0] * a_wh[:, 1] - inter)
        order = np.argsort(-ious, kind="stable")
        free = [a for a in order if t[i, j, a, 0] == 0]
        if free:
            a = free[0]
        else:
            collisions += 1
            a = order[0]
            if area[i, j, a] >= w * h:
                continue
        _fill(t, i, j, a, grid, a_wh, cx, cy, w, h, c)
        area[i, j, a] = w * h
        if extra_positive_iou is not None:
            extras += [(i, j, b, cx, cy, w, h, c) for b in order if b != a and ious[b] >= extra_positive_iou]
    # extras only take slots that no box claimed as its own
    for i, j, b, cx, cy, w, h, c in extras:
        if t[i, j, b, 0] == 0:
            _fill(t, i, j, b, grid, a_wh, cx, cy, w, h, c)
    return EncodedTargets(t, collisions)


def targets_to_raw(targets: np.ndarray, confidence: float = 20.0) -> np.ndarray:
    """Pre-activation tensor whose decoding reproduces ``targets`` exactly."""
    t = np.asarray(targets, dtype=np.float64)
    raw = np.zeros_like(t)
    pos = t[..., 0] > 0
    raw[..., 0] = np.where(pos, confidence, -confidence)
    xy = np.clip(t[..., 1:3], 1e-9, 1 - 1e-9)
    raw[..., 1:3] = np.log(xy) - np.log1p(-xy)
    raw[..., 3:5] = t[..., 3:5]
    raw[..., 5:] = confidence * t[..., 5:]
    return raw.reshape(t.shape[:2] + (-1,))


def decode_grid(raw, grid: GridConfig, anchors: AnchorSet, threshold=None) -> list[Detection]:
    """Turn one image's raw output (cells_y, cells_x, A*15) into detections.

    score = sigmoid(objectness) * max softmax class probability; detections
    scoring below the confidence threshold are dropped.
    """
    _check_anchors(grid, anchors)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != grid.raw_shape:
        raise ValueError(f"raw output shape {raw.shape} != expected {grid.raw_shape}")
    thr = grid.confidence_threshold if threshold is None else threshold
    r = raw.reshape(grid.cells_y, grid.cells_x, grid.boxes_per_cell, FIELDS)
    obj = sigmoid(r[..., 0])
    cls_p = softmax(r[..., 5:])
    cls = cls_p.argmax(axis=-1)
    score = obj * cls_p.max(axis=-1)
    a_wh = anchors.pixel_sizes(grid.input_height)
    out = []
    for i, j, a in zip(*np.nonzero(score >= thr)):
        cx = (j + sigmoid(r[i, j, a, 1:2])[0]) * grid.stride_x
        cy = (i + sigmoid(r[i, j, a, 2:3])[0]) * grid.stride_y
        w = a_wh[a, 0] * np.exp(np.clip(r[i, j, a, 3], -10, 10))
        h = a_wh[a, 1] * np.exp(np.clip(r[i, j, a, 4], -10, 10))
        s = float(min(max(score[i, j, a], 0.0), 1.0))
        out.append(Detection(float(cx - w / 2), float(cy - h / 2), float(w), float(h), int(cls[i, j, a]), s))
    return out


def detector_loss(raw, targets, grid: GridConfig, objectness="focal", alpha=0.25, gamma=2.0,
                  box_weight=5.0, class_weight=1.0):
    """Batch loss (sum over the grid, mean over images) and its gradient.

    Objectness uses focal or cross-entropy loss on every slot; positives add
    squared error on (sigmoid centre offsets, log size offsets) and softmax
    cross-entropy on the class.
    """
    n = raw.shape[0]
    r = np.asarray(raw, dtype=np.float64).reshape(n, grid.cells_y, grid.cells_x, grid.boxes_per_cell, FIELDS)
    t = np.asarray(targets, dtype=np.float64)
    pos = t[..., 0] > 0
    grad = np.zeros_like(r)

    y = np.where(pos, 1, -1)
    obj_loss, obj_grad = binary_objectness_loss(r[..., 0], y, kind=objectness, alpha=alpha, gamma=gamma)
    total = obj_loss.sum()
    grad[..., 0] = obj_grad

    if pos.any():
        rp = r[pos]
        tp = t[pos]
        sxy = sigmoid(rp[:, 1:3])
        dxy = sxy - tp[:, 1:3]
        dwh = rp[:, 3:5] - tp[:, 3:5]
        total += box_weight * ((dxy ** 2).sum() + (dwh ** 2).sum())
        g = np.zeros_like(rp)
        g[:, 1:3] = box_weight * 2 * dxy * sxy * (1 - sxy)
        g[:, 3:5] = box_weight * 2 * dwh
        p = softmax(rp[:, 5:])
        cls = tp[:, 5:].argmax(axis=-1)
        total += class_weight * -np.log(np.clip(p[np.arange(len(cls)), cls], 1e-12, None)).sum()
        p[np.arange(len(cls)), cls] -= 1
        g[:, 5:] = class_weight * p
        g[:, 0] = grad[pos][:, 0]
        grad[pos] = g
    return total / n, (grad / n).reshape(raw.shape).astype(raw.dtype)
