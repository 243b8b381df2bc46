"""Data types shared by the glyph corpus and the string synthesizer."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

INK_THRESHOLD = 128


class CorpusIncompleteError(ValueError):
    """Raised when a glyph corpus lacks glyphs for one or more classes."""


class ConnectionType(str, Enum):
    I = "I"
    II = "II"
    III = "III"
    V = "V"
    NONE = "NONE"

    @property
    def touching(self) -> bool:
        return self is not ConnectionType.NONE


def ink_mask(raster: np.ndarray) -> np.ndarray:
    return raster < INK_THRESHOLD


@dataclass(frozen=True)
class GlyphSample:
    digit_class: int
    writer_id: str
    raster: np.ndarray

    def __post_init__(self):
        if not 0 <= self.digit_class <= 9:
            raise ValueError(f"digit_class must be in [0, 9], got {self.digit_class}")
        if self.raster.ndim != 2 or self.raster.dtype != np.uint8:
            raise ValueError("raster must be a 2-D uint8 array")
        if not ink_mask(self.raster).any():
            raise ValueError("raster has no ink pixels")

    @property
    def height(self) -> int:
        return self.raster.shape[0]

    @property
    def width(self) -> int:
        return self.raster.shape[1]


@dataclass
class GlyphCorpus:
    glyphs: list[GlyphSample]
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.glyphs)

    def by_class(self) -> dict[int, list[GlyphSample]]:
        out: dict[int, list[GlyphSample]] = defaultdict(list)
        for g in self.glyphs:
            out[g.digit_class].append(g)
        return dict(out)

    def by_class_and_writer(self) -> dict[int, dict[str, list[GlyphSample]]]:
        out: dict[int, dict[str, list[GlyphSample]]] = defaultdict(lambda: defaultdict(list))
        for g in self.glyphs:
            out[g.digit_class][g.writer_id].append(g)
        return {c: dict(w) for c, w in out.items()}

    def class_counts(self) -> dict[int, int]:
        counts = Counter(g.digit_class for g in self.glyphs)
        return {c: counts.get(c, 0) for c in range(10)}

    @property
    def writers(self) -> list[str]:
        return sorted({g.writer_id for g in self.glyphs}, key=_writer_sort_key)

    def check_complete(self):
        missing = [c for c, n in self.class_counts().items() if n == 0]
        if missing:
            raise CorpusIncompleteError(f"no glyphs for classes {missing}")


def _writer_sort_key(writer_id: str):
    # numeric ids sort numerically, everything else lexically after them
    try:
        return (0, int(writer_id), "")
    except ValueError:
        return (1, 0, writer_id)


@dataclass(frozen=True)
class DigitBox:
    digit_class: int
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box width and height must be positive")

    @property
    def center_x(self) -> float:
        return self.x + self.w / 2

    def to_json(self) -> dict:
        return {"c": self.digit_class, "x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_json(cls, d: dict) -> "DigitBox":
        return cls(int(d["c"]), int(d["x"]), int(d["y"]), int(d["w"]), int(d["h"]))


@dataclass
class StringSample:
    raster: np.ndarray
    label: str
    boxes: list[DigitBox]
    writer_ids: frozenset[str]
    touching: list[ConnectionType]
    split: str

    def __post_init__(self):
        if len(self.label) != len(self.boxes):
            raise ValueError("label and boxes differ in length")
        if self.boxes and len(self.touching) != len(self.boxes) - 1:
            raise ValueError("touching must have one entry per adjacent pair")
        xs = [b.x for b in self.boxes]
        if xs != sorted(xs):
            raise ValueError("boxes must be sorted by ascending x")
        h, w = self.raster.shape
        for b in self.boxes:
            if b.x < 0 or b.y < 0 or b.x + b.w > w or b.y + b.h > h:
                raise ValueError(f"box {b} outside a {w}x{h} image")
