"""Network input width chosen from the source string width."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

# (string length, average source width, best network input width) as published
PUBLISHED_WIDTHS = [
    (2, 75, 128),
    (4, 150, 256),
    (6, 228, 384),
    (8, 306, 512),
    (10, 381, 640),
    (12, 448, 768),
    (14, 524, 896),
    (16, 596, 1024),
    (18, 666, 1152),
    (20, 750, 1280),
]


@dataclass(frozen=True)
class ResizePolicy:
    base_width: int = 128
    base_threshold: float = 75
    scale: str = "1.70"
    height: int = 128
    granularity: int = 32


def input_width_rule(source_width, policy: ResizePolicy = ResizePolicy()) -> int:
    """``base_width`` for narrow strings, else ``scale * source_width`` rounded to the
    nearest multiple of ``granularity`` (ties round up)."""
    if source_width <= 0:
        raise ValueError("source width must be positive")
    sw = Fraction(source_width) if not isinstance(source_width, float) else Fraction(str(source_width))
    if sw <= Fraction(str(policy.base_threshold)):
        return policy.base_width
    target = Fraction(policy.scale) * sw / policy.granularity
    units = int(target + Fraction(1, 2))  # floor(x + 1/2): nearest, ties up
    return max(units, 1) * policy.granularity
