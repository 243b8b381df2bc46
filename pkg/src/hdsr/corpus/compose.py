"""Ink-union composition of glyphs and touching classification."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .types import ConnectionType, DigitBox, ink_mask

HEAVY_OVERLAP_IOU = 0.15
POINT_CONTACT_EXTENT = 2


def horizontal_iou(a: DigitBox, b: DigitBox) -> float:
    inter = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    if inter <= 0:
        return 0.0
    union = max(a.x + a.w, b.x + b.w) - min(a.x, b.x)
    return inter / union


def classify_contact(contact: np.ndarray, left: DigitBox, right: DigitBox) -> ConnectionType:
    """Map the coinciding-ink mask of a glyph pair to a connection type.

    Precedence: no contact -> NONE; heavy box overlap -> V; several disjoint
    contact regions -> III; a single region spanning at most
    ``POINT_CONTACT_EXTENT`` pixels -> I; otherwise II.
    """
    if not contact.any():
        return ConnectionType.NONE
    if horizontal_iou(left, right) > HEAVY_OVERLAP_IOU:
        return ConnectionType.V
    labels, n = ndimage.label(contact, structure=np.ones((3, 3), dtype=bool))
    if n > 1:
        return ConnectionType.III
    rows, cols = np.nonzero(labels)
    extent = max(rows.max() - rows.min(), cols.max() - cols.min()) + 1
    return ConnectionType.I if extent <= POINT_CONTACT_EXTENT else ConnectionType.II


def place_glyphs(rasters, xs, dys):
    """Composite glyphs on a white canvas, bottoms aligned then shifted by ``dys``.

    Returns the canvas, the placed (x, y, w, h) of each glyph and a boolean
    ink mask per glyph in canvas coordinates.
    """
    base = max(r.shape[0] for r in rasters)
    tops = [base - r.shape[0] + dy for r, dy in zip(rasters, dys)]
    y0 = min(tops)
    tops = [t - y0 for t in tops]
    height = max(t + r.shape[0] for t, r in zip(tops, rasters))
    width = max(x + r.shape[1] for x, r in zip(xs, rasters))
    canvas = np.full((height, width), 255, dtype=np.uint8)
    places = []
    masks = []
    for r, x, t in zip(rasters, xs, tops):
        h, w = r.shape
        region = canvas[t:t + h, x:x + w]
        np.minimum(region, r, out=region)  # darker wins
        m = np.zeros((height, width), dtype=bool)
        m[t:t + h, x:x + w] = ink_mask(r)
        masks.append(m)
        places.append((x, t, w, h))
    return canvas, places, masks


def connect_pair(left: np.ndarray, right: np.ndarray, overlap: int, gap: int = 0, dy: int = 0,
                 classes: tuple[int, int] = (0, 0)):
    """Join two glyph rasters horizontally.

    The right glyph starts ``overlap`` pixels inside the left glyph's right
    edge (or ``gap`` pixels past it when ``overlap`` is 0) and is shifted
    vertically by ``dy``. Returns ``(raster, (left_box, right_box), ConnectionType)``.
    """
    if overlap < 0 or overlap >= min(left.shape[1], right.shape[1]):
        raise ValueError(f"overlap {overlap} outside [0, {min(left.shape[1], right.shape[1])})")
    if gap < 0:
        raise ValueError("gap must be non-negative")
    if overlap and gap:
        raise ValueError("overlap and gap are mutually exclusive")
    xs = [0, left.shape[1] - overlap + gap]
    canvas, places, masks = place_glyphs([left, right], xs, [0, dy])
    boxes = tuple(DigitBox(c, *p) for c, p in zip(classes, places))
    kind = classify_contact(masks[0] & masks[1], *boxes)
    return canvas, boxes, kind
