"""Reading and writing glyph corpora and PGM rasters on disk."""

from __future__ import annotations

import logging
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .types import CorpusIncompleteError, GlyphCorpus, GlyphSample

log = logging.getLogger(__name__)


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise ValueError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()


def write_pgm(path, raster: np.ndarray):
    if raster.dtype != np.uint8 or raster.ndim != 2:
        raise ValueError("raster must be a 2-D uint8 array")
    h, w = raster.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(raster).tobytes())


def write_png(path, raster: np.ndarray):
    Image.fromarray(raster, mode="L").save(path, format="PNG")


def load_glyph_corpus(root_path) -> GlyphCorpus:
    """Load ``<root>/<class>/<writer_id>__<index>.pgm`` glyphs.

    Unparseable files are skipped and recorded in ``corpus.warnings``.
    Raises ``CorpusIncompleteError`` when any of the ten classes is empty.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise CorpusIncompleteError(f"{root} is not a readable directory")
    glyphs = []
    warnings = []
    for digit in range(10):
        class_dir = root / str(digit)
        if not class_dir.is_dir():
            continue
        for path in sorted(class_dir.iterdir()):
            if path.suffix.lower() != ".pgm":
                continue
            writer_id, sep, _ = path.stem.rpartition("__")
            if not sep or not writer_id:
                warnings.append(f"{path}: name does not match <writer>__<index>.pgm")
                continue
            try:
                raster = read_pgm(path)
                glyphs.append(GlyphSample(digit, writer_id, raster))
            except Exception as exc:  # corrupt files are skipped, not fatal
                warnings.append(f"{path}: {exc}")
    for w in warnings:
        log.warning("skipped glyph %s", w)
    corpus = GlyphCorpus(glyphs, warnings)
    corpus.check_complete()
    log.info("loaded %d glyphs: %s", len(corpus), corpus.class_counts())
    return corpus


def save_glyph_corpus(corpus: GlyphCorpus, root_path):
    root = Path(root_path)
    counters: dict[tuple[int, str], int] = {}
    for g in corpus.glyphs:
        key = (g.digit_class, g.writer_id)
        idx = counters.get(key, 0)
        counters[key] = idx + 1
        class_dir = root / str(g.digit_class)
        os.makedirs(class_dir, exist_ok=True)
        write_pgm(class_dir / f"{g.writer_id}__{idx:04d}.pgm", g.raster)
