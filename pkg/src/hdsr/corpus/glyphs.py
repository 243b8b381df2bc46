"""Procedural stroke-rendered digit glyphs.

Each digit is a set of polylines in a unit box (x to the right, y down).
A writer draws every digit with a persistent style (slant, stroke width,
aspect, size) and each sample adds small per-glyph jitter on top.
"""

from __future__ import annotations

import numpy as np

from .types import GlyphCorpus, GlyphSample, ink_mask


def _arc(cx, cy, rx, ry, start_deg, end_deg, n=24):
    t = np.deg2rad(np.linspace(start_deg, end_deg, n))
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _line(*pts):
    return np.asarray(pts, dtype=float)


# Angles follow image coordinates (y down), so 270 degrees is the top of an arc.
_SKELETONS = {
    0: [_arc(0.5, 0.5, 0.42, 0.5, 0, 360, 40)],
    1: [_line((0.2, 0.22), (0.62, 0.0), (0.55, 1.0))],
    2: [
        np.vstack([
            _arc(0.5, 0.28, 0.4, 0.28, 190, 360, 16),
            _arc(0.5, 0.28, 0.4, 0.28, 0, 40, 6),
            _line((0.06, 1.0), (0.95, 1.0)),
        ])
    ],
    3: [
        np.vstack([
            _arc(0.48, 0.25, 0.4, 0.25, 200, 450, 20),
            _arc(0.48, 0.73, 0.45, 0.27, 270, 520, 20),
        ])
    ],
    4: [_line((0.72, 1.0), (0.72, 0.0), (0.05, 0.68), (0.98, 0.68))],
    5: [
        np.vstack([
            _line((0.9, 0.0), (0.22, 0.0), (0.15, 0.45)),
            _arc(0.48, 0.68, 0.42, 0.32, 225, 480, 20),
        ])
    ],
    6: [
        np.vstack([
            _arc(0.85, 0.7, 0.75, 0.7, 255, 180, 12),
            _arc(0.5, 0.7, 0.4, 0.3, 180, 540, 28),
        ])
    ],
    7: [_line((0.04, 0.0), (0.96, 0.0), (0.38, 1.0))],
    8: [
        _arc(0.5, 0.25, 0.34, 0.25, 90, 450, 28),
        _arc(0.5, 0.73, 0.42, 0.27, 270, 630, 28),
    ],
    9: [
        _arc(0.48, 0.3, 0.4, 0.3, 0, 360, 28),
        _line((0.88, 0.3), (0.78, 1.0)),
    ],
}


def _segment_distance(px, py, segs):
    """Minimum distance from pixel centres to a set of segments."""
    a = segs[:, 0]
    b = segs[:, 1]
    d = b - a
    len2 = np.maximum((d ** 2).sum(axis=1), 1e-12)
    # (P, S) projections
    t = ((px[:, None] - a[None, :, 0]) * d[None, :, 0] + (py[:, None] - a[None, :, 1]) * d[None, :, 1]) / len2
    t = np.clip(t, 0.0, 1.0)
    qx = a[None, :, 0] + t * d[None, :, 0]
    qy = a[None, :, 1] + t * d[None, :, 1]
    return np.sqrt(((px[:, None] - qx) ** 2 + (py[:, None] - qy) ** 2).min(axis=1))


def render_strokes(polylines, height, aspect, slant, thickness):
    """Rasterize unit-box polylines into a tight uint8 glyph (ink dark)."""
    segs = []
    for pl in polylines:
        x = pl[:, 0] * aspect * height + slant * (1.0 - pl[:, 1]) * height
        y = pl[:, 1] * height
        pts = np.stack([x, y], axis=1)
        segs.append(np.stack([pts[:-1], pts[1:]], axis=1))
    segs = np.concatenate(segs)
    pad = thickness / 2 + 2
    lo = segs.reshape(-1, 2).min(axis=0) - pad
    hi = segs.reshape(-1, 2).max(axis=0) + pad
    segs = segs - lo
    w = int(np.ceil(hi[0] - lo[0]))
    h = int(np.ceil(hi[1] - lo[1]))
    yy, xx = np.mgrid[0:h, 0:w]
    dist = _segment_distance(xx.ravel() + 0.5, yy.ravel() + 0.5, segs).reshape(h, w)
    coverage = np.clip(thickness / 2 - dist + 0.5, 0.0, 1.0)
    raster = np.round(255.0 * (1.0 - coverage)).astype(np.uint8)
    return crop_to_ink(raster)


def crop_to_ink(raster: np.ndarray) -> np.ndarray:
    mask = ink_mask(raster)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise ValueError("raster has no ink")
    return raster[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].copy()


def _writer_style(rng):
    return {
        "height": rng.uniform(22.0, 28.0),
        "aspect": rng.uniform(0.55, 0.75),
        "slant": rng.uniform(-0.2, 0.25),
        "thickness": rng.uniform(1.8, 3.0),
    }


def render_digit(digit, rng, style):
    polylines = [
        pl + rng.normal(0.0, 0.025, size=pl.shape) for pl in _SKELETONS[digit]
    ]
    return render_strokes(
        polylines,
        height=style["height"] * rng.uniform(0.93, 1.07),
        aspect=style["aspect"] * rng.uniform(0.92, 1.08),
        slant=style["slant"] + rng.uniform(-0.06, 0.06),
        thickness=max(1.4, style["thickness"] + rng.uniform(-0.3, 0.3)),
    )


def procedural_glyphs(seed: int, per_class: int, writers: int = 10, first_writer: int = 1000) -> GlyphCorpus:
    """Deterministic synthetic glyph corpus.

    Glyph ``i`` of every class is drawn by writer ``first_writer + i % writers``;
    writer ids are decimal strings so numeric split ranges apply to them.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if writers < 1:
        raise ValueError("writers must be >= 1")
    styles = [
        _writer_style(np.random.default_rng([seed, 0, w])) for w in range(writers)
    ]
    glyphs = []
    for digit in range(10):
        for i in range(per_class):
            w = i % writers
            rng = np.random.default_rng([seed, 1, digit, i])
            raster = render_digit(digit, rng, styles[w])
            glyphs.append(GlyphSample(digit, str(first_writer + w), raster))
    return GlyphCorpus(glyphs)
