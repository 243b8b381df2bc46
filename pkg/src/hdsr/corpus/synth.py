"""Synthetic digit-string datasets with writer-disjoint splits."""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .compose import classify_contact, place_glyphs
from .io import read_pgm, write_pgm, write_png
from .types import (
    ConnectionType,
    CorpusIncompleteError,
    DigitBox,
    GlyphCorpus,
    StringSample,
    _writer_sort_key,
)

SPLITS = ("train", "validation", "test")
BORDER = 5

# Samples per string length in the reference training split (lengths 2..6).
REFERENCE_LENGTH_COUNTS = {2: 42614, 3: 76890, 4: 82625, 5: 82944, 6: 82926}
REFERENCE_WRITER_RANGES = {"train": (1000, 1599), "validation": (1600, 1799), "test": (1800, 1999)}

_DEFAULT_CLASS_WEIGHTS = (1.0, 0.6, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


class SplitPolicyError(ValueError):
    pass


@dataclass
class SynthesisConfig:
    length_range: tuple[int, int] = (2, 6)
    touching_fraction: float = 0.15
    overlap_range: tuple[int, int] = (1, 6)
    class_weights: tuple[float, ...] = _DEFAULT_CLASS_WEIGHTS
    length_distribution: tuple[float, ...] | None = None
    rng_seed: int = 0
    vertical_jitter: float = 0.10
    gap_range: tuple[int, int] = (1, 3)

    def __post_init__(self):
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid length_range {self.length_range}")
        if not 0.0 <= self.touching_fraction <= 1.0:
            raise ValueError("touching_fraction must be a probability")
        if self.overlap_range[0] < 1 or self.overlap_range[1] < self.overlap_range[0]:
            raise ValueError("overlap_range must satisfy 1 <= min <= max")
        if self.gap_range[0] < 1 or self.gap_range[1] < self.gap_range[0]:
            raise ValueError("gap_range must satisfy 1 <= min <= max")
        cw = np.asarray(self.class_weights, dtype=float)
        if cw.shape != (10,) or (cw < 0).any() or cw.sum() == 0:
            raise ValueError("class_weights needs 10 non-negative values, not all zero")
        if self.length_distribution is None:
            self.length_distribution = tuple(
                float(REFERENCE_LENGTH_COUNTS.get(n, 1)) for n in range(lo, hi + 1)
            )
        ld = np.asarray(self.length_distribution, dtype=float)
        if ld.shape != (hi - lo + 1,) or (ld < 0).any() or ld.sum() == 0:
            raise ValueError("length_distribution needs one non-negative weight per length")

    @property
    def lengths(self) -> np.ndarray:
        return np.arange(self.length_range[0], self.length_range[1] + 1)

    def length_probabilities(self) -> np.ndarray:
        ld = np.asarray(self.length_distribution, dtype=float)
        return ld / ld.sum()

    def class_probabilities(self) -> np.ndarray:
        cw = np.asarray(self.class_weights, dtype=float)
        return cw / cw.sum()


@dataclass
class SplitPolicy:
    """Assigns each writer to at most one split."""

    assignment: dict[str, str] = field(default_factory=dict)
    ranges: dict[str, tuple[int, int]] | None = None

    @classmethod
    def from_ranges(cls, ranges: dict[str, tuple[int, int]]) -> "SplitPolicy":
        spans = sorted(ranges.values())
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 <= a1:
                raise SplitPolicyError(f"writer ranges overlap: {ranges}")
        return cls(ranges=dict(ranges))

    @classmethod
    def proportional(cls, writers, fractions=(0.6, 0.2, 0.2), splits=SPLITS) -> "SplitPolicy":
        """Split sorted writers into consecutive blocks (default 600:200:200)."""
        writers = sorted(set(writers), key=_writer_sort_key)
        frac = np.asarray(fractions, dtype=float)
        bounds = np.round(np.cumsum(frac / frac.sum()) * len(writers)).astype(int)
        assignment = {}
        start = 0
        for split, end in zip(splits, bounds):
            for w in writers[start:end]:
                assignment[w] = split
            start = end
        return cls(assignment=assignment)

    def split_of(self, writer_id: str) -> str | None:
        if self.ranges is None:
            return self.assignment.get(writer_id)
        try:
            wid = int(writer_id)
        except ValueError:
            return None
        for split, (lo, hi) in self.ranges.items():
            if lo <= wid <= hi:
                return split
        return None


@dataclass
class DatasetManifest:
    records: list[dict]
    distribution_summary: dict
    root: Path | None = None
    rasters: list[np.ndarray] | None = None

    MANIFEST = "manifest.jsonl"
    SUMMARY = "summary.json"

    def __len__(self):
        return len(self.records)

    def sample(self, i: int) -> StringSample:
        rec = self.records[i]
        if self.rasters is not None:
            raster = self.rasters[i]
        else:
            if self.root is None:
                raise ValueError("manifest has neither in-memory rasters nor a root directory")
            raster = read_pgm(self.root / rec["image"])
        return record_to_sample(rec, raster)

    def samples(self, split: str | None = None) -> list[StringSample]:
        return [self.sample(i) for i, r in enumerate(self.records) if split is None or r["split"] == split]

    def subset(self, split: str) -> "DatasetManifest":
        idx = [i for i, r in enumerate(self.records) if r["split"] == split]
        records = [self.records[i] for i in idx]
        rasters = None if self.rasters is None else [self.rasters[i] for i in idx]
        return DatasetManifest(records, summarize(records), self.root, rasters)

    def images_and_boxes(self, split: str | None = None):
        samples = self.samples(split)
        return [s.raster for s in samples], [s.boxes for s in samples]

    def images_and_labels(self, split: str | None = None):
        samples = self.samples(split)
        return [s.raster for s in samples], [s.label for s in samples]

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        root = path.parent if path.is_file() else path
        manifest_path = path if path.is_file() else path / cls.MANIFEST
        with open(manifest_path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        for rec in records:
            if not (root / rec["image"]).is_file():
                raise FileNotFoundError(f"manifest references missing image {rec['image']}")
        return cls(records, summarize(records), root)


def record_to_sample(rec: dict, raster: np.ndarray) -> StringSample:
    return StringSample(
        raster=raster,
        label=rec["label"],
        boxes=[DigitBox.from_json(b) for b in rec["boxes"]],
        writer_ids=frozenset(rec["writers"]),
        touching=[ConnectionType(t) for t in rec["touching"]],
        split=rec["split"],
    )


def summarize(records) -> dict:
    out = {}
    for split in sorted({r["split"] for r in records}, key=lambda s: (SPLITS + (s,)).index(s)):
        recs = [r for r in records if r["split"] == split]
        lengths = Counter(len(r["label"]) for r in recs)
        classes = Counter(ch for r in recs for ch in r["label"])
        tags = Counter(t for r in recs for t in r["touching"])
        pairs = sum(tags.values())
        out[split] = {
            "samples": len(recs),
            "per_length": {str(k): lengths[k] for k in sorted(lengths)},
            "per_class": {str(c): classes.get(str(c), 0) for c in range(10)},
            "pairs": pairs,
            "touching_pairs": pairs - tags.get("NONE", 0),
            "touching_rate": (pairs - tags.get("NONE", 0)) / pairs if pairs else 0.0,
            "per_connection": {t.value: tags.get(t.value, 0) for t in ConnectionType},
            "writers": len({w for r in recs for w in r["writers"]}),
        }
    return out


def _split_pools(corpus: GlyphCorpus, policy: SplitPolicy, wanted, class_probs):
    pools = {}
    for split in wanted:
        by_class = {c: [] for c in range(10)}
        by_writer: dict[str, dict[int, list]] = {}
        for g in corpus.glyphs:
            if policy.split_of(g.writer_id) == split:
                by_class[g.digit_class].append(g)
                by_writer.setdefault(g.writer_id, {}).setdefault(g.digit_class, []).append(g)
        if not by_writer:
            raise SplitPolicyError(f"split policy leaves split {split!r} without writers")
        missing = [c for c in range(10) if class_probs[c] > 0 and not by_class[c]]
        if missing:
            raise CorpusIncompleteError(f"split {split!r} has no glyphs for classes {missing}")
        writers = sorted(by_writer, key=_writer_sort_key)
        pools[split] = (writers, by_writer, by_class)
    return pools


def _pair_contact(left, right, x_right, dy_left, dy_right):
    _, places, masks = place_glyphs([left, right], [0, x_right], [dy_left, dy_right])
    return (masks[0] & masks[1]).any()


def generate_sample(pool, cfg: SynthesisConfig, split: str, split_index: int, index: int):
    """Build one StringSample from an independent RNG stream.

    The stream is keyed by (seed, split, index) so samples can be generated
    in any order or in parallel with identical results.
    """
    writers, by_writer, by_class = pool
    rng = np.random.default_rng([cfg.rng_seed, 7, split_index, index])
    length = int(rng.choice(cfg.lengths, p=cfg.length_probabilities()))
    digits = rng.choice(10, size=length, p=cfg.class_probabilities())
    writer = writers[rng.integers(len(writers))]
    glyphs = []
    for d in digits:
        options = by_writer[writer].get(int(d)) or by_class[int(d)]
        glyphs.append(options[rng.integers(len(options))])
    rasters = [g.raster for g in glyphs]
    dys = []
    for r in rasters:
        j = int(round(cfg.vertical_jitter * r.shape[0]))
        dys.append(int(rng.integers(-j, j + 1)) if j else 0)
    want_touch = rng.random(length - 1) < cfg.touching_fraction
    xs = [0]
    for i in range(length - 1):
        left, right = rasters[i], rasters[i + 1]
        right_edge = xs[i] + left.shape[1]
        max_overlap = min(left.shape[1], right.shape[1]) - 1
        placed = False
        if want_touch[i] and max_overlap >= 1:
            ov = int(rng.integers(cfg.overlap_range[0], cfg.overlap_range[1] + 1))
            ov = min(max(ov, 1), max_overlap)
            while ov <= max_overlap:
                if _pair_contact(left, right, left.shape[1] - ov, dys[i], dys[i + 1]):
                    xs.append(right_edge - ov)
                    placed = True
                    break
                ov += 1
        if not placed:
            gap = int(rng.integers(cfg.gap_range[0], cfg.gap_range[1] + 1))
            xs.append(right_edge + gap)
    canvas, places, masks = place_glyphs(rasters, xs, dys)
    raster = np.pad(canvas, BORDER, constant_values=255)
    boxes = [
        DigitBox(int(d), x + BORDER, y + BORDER, w, h) for d, (x, y, w, h) in zip(digits, places)
    ]
    touching = [
        classify_contact(masks[i] & masks[i + 1], boxes[i], boxes[i + 1]) for i in range(length - 1)
    ]
    label = "".join(str(int(d)) for d in digits)
    return StringSample(raster, label, boxes, frozenset(g.writer_id for g in glyphs), touching, split)


def synth_dataset(corpus: GlyphCorpus, cfg: SynthesisConfig, split_policy: SplitPolicy,
                  counts: dict[str, int], out_dir=None, png: bool = False, workers: int = 1,
                  force: bool = False) -> DatasetManifest:
    """Generate ``counts[split]`` strings per split.

    With ``out_dir`` set, images and ``manifest.jsonl`` are written atomically
    (a temporary sibling directory renamed into place); otherwise the
    manifest keeps its rasters in memory.
    """
    wanted = [s for s in counts if counts[s] > 0]
    for s in wanted:
        if s not in SPLITS:
            raise SplitPolicyError(f"unknown split {s!r}")
    pools = _split_pools(corpus, split_policy, wanted, cfg.class_probabilities())

    jobs = [(s, SPLITS.index(s), i) for s in wanted for i in range(counts[s])]

    def work(job):
        split, split_idx, i = job
        return generate_sample(pools[split], cfg, split, split_idx, i)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            samples = list(ex.map(work, jobs))
    else:
        samples = [work(j) for j in jobs]

    records = []
    for (split, _, i), s in zip(jobs, samples):
        ext = "png" if png else "pgm"
        records.append({
            "image": f"images/{split}/{i:07d}.{ext}",
            "label": s.label,
            "boxes": [b.to_json() for b in s.boxes],
            "writers": sorted(s.writer_ids, key=_writer_sort_key),
            "touching": [t.value for t in s.touching],
            "split": split,
        })
    summary = summarize(records)
    summary["config"] = config_dict(cfg)
    manifest = DatasetManifest(records, summary, None, [s.raster for s in samples])
    if out_dir is not None:
        write_manifest(manifest, out_dir, force=force)
    return manifest


def write_manifest(manifest: DatasetManifest, out_dir, force: bool = False):
    out = Path(out_dir)
    if out.exists():
        if not force:
            raise FileExistsError(f"{out} exists; pass force=True to overwrite")
        shutil.rmtree(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        for rec, raster in zip(manifest.records, manifest.rasters):
            path = tmp / rec["image"]
            path.parent.mkdir(parents=True, exist_ok=True)
            if path.suffix == ".png":
                write_png(path, raster)
            else:
                write_pgm(path, raster)
        with open(tmp / DatasetManifest.MANIFEST, "w", encoding="utf-8") as fh:
            for rec in manifest.records:
                fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        with open(tmp / DatasetManifest.SUMMARY, "w", encoding="utf-8") as fh:
            json.dump(manifest.distribution_summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    manifest.root = out


def config_dict(cfg: SynthesisConfig) -> dict:
    return asdict(cfg)
