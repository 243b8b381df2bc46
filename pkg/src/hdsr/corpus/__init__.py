"""Glyph corpora and synthetic digit-string datasets."""

from .compose import classify_contact, connect_pair, horizontal_iou
from .glyphs import procedural_glyphs
from .io import load_glyph_corpus, read_pgm, save_glyph_corpus, write_pgm
from .synth import (
    BORDER,
    SPLITS,
    REFERENCE_LENGTH_COUNTS,
    REFERENCE_WRITER_RANGES,
    DatasetManifest,
    SplitPolicy,
    SplitPolicyError,
    SynthesisConfig,
    synth_dataset,
)
from .types import (
    INK_THRESHOLD,
    ConnectionType,
    CorpusIncompleteError,
    DigitBox,
    GlyphCorpus,
    GlyphSample,
    StringSample,
    ink_mask,
)

__all__ = [
    "BORDER",
    "INK_THRESHOLD",
    "SPLITS",
    "REFERENCE_LENGTH_COUNTS",
    "REFERENCE_WRITER_RANGES",
    "ConnectionType",
    "CorpusIncompleteError",
    "DatasetManifest",
    "DigitBox",
    "GlyphCorpus",
    "GlyphSample",
    "SplitPolicy",
    "SplitPolicyError",
    "StringSample",
    "SynthesisConfig",
    "classify_contact",
    "connect_pair",
    "horizontal_iou",
    "ink_mask",
    "load_glyph_corpus",
    "procedural_glyphs",
    "read_pgm",
    "save_glyph_corpus",
    "synth_dataset",
    "write_pgm",
]
