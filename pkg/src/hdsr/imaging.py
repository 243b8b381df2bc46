"""Raster resizing shared by the recognizers."""

from __future__ import annotations

import numpy as np
from PIL import Image


def resize(raster: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a uint8 raster."""
    im = Image.fromarray(raster, mode="L")
    return np.asarray(im.resize((int(width), int(height)), Image.BILINEAR), dtype=np.uint8)


def to_ink(raster: np.ndarray) -> np.ndarray:
    """uint8 (ink dark) to float32 in [0, 1] with ink high."""
    return (255.0 - raster.astype(np.float32)) / 255.0


def fit_to_canvas(raster: np.ndarray, height: int, width: int, scale=None):
    """Aspect-preserving resize into a (height, width) canvas, anchored top-left.

    The remaining area is padded with background. Returns ``(ink, scale)``
    where ``scale`` maps source pixel coordinates to canvas coordinates.
    """
    h, w = raster.shape
    if scale is None:
        scale = min(height / h, width / w)
    nh = max(1, min(height, int(round(h * scale))))
    nw = max(1, min(width, int(round(w * scale))))
    canvas = np.zeros((height, width), dtype=np.float32)
    canvas[:nh, :nw] = to_ink(resize(raster, nh, nw))
    return canvas, scale


def stretch(raster: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize to exactly (height, width), ignoring aspect ratio."""
    return to_ink(resize(raster, height, width))


def fit_centered(raster: np.ndarray, size: int, margin: int = 2, width: int | None = None) -> np.ndarray:
    """Aspect-preserving resize centred in a (size, width) canvas; square by default."""
    width = size if width is None else width
    h, w = raster.shape
    scale = min((size - 2 * margin) / h, (width - 2 * margin) / w)
    nh = max(1, int(round(h * scale)))
    nw = max(1, int(round(w * scale)))
    canvas = np.zeros((size, width), dtype=np.float32)
    top = (size - nh) // 2
    left = (width - nw) // 2
    canvas[top:top + nh, left:left + nw] = to_ink(resize(raster, nh, nw))
    return canvas
