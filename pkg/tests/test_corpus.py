import json

import numpy as np
import pytest

from hdsr.corpus import (
    ConnectionType,
    CorpusIncompleteError,
    DatasetManifest,
    DigitBox,
    GlyphCorpus,
    GlyphSample,
    SplitPolicy,
    SplitPolicyError,
    SynthesisConfig,
    classify_contact,
    connect_pair,
    horizontal_iou,
    ink_mask,
    load_glyph_corpus,
    procedural_glyphs,
    read_pgm,
    save_glyph_corpus,
    synth_dataset,
    write_pgm,
)


def _bar(h, w, x0, x1):
    r = np.full((h, w), 255, np.uint8)
    r[:, x0:x1] = 0
    return r


def test_procedural_glyphs_are_deterministic_and_complete():
    a = procedural_glyphs(7, 3, writers=3)
    b = procedural_glyphs(7, 3, writers=3)
    assert len(a) == 30
    assert a.class_counts() == {c: 3 for c in range(10)}
    assert a.writers == ["1000", "1001", "1002"]
    for g, h in zip(a.glyphs, b.glyphs):
        assert np.array_equal(g.raster, h.raster)
        assert ink_mask(g.raster).any()


def test_glyph_sample_validation():
    with pytest.raises(ValueError):
        GlyphSample(10, "w", np.zeros((3, 3), np.uint8))
    with pytest.raises(ValueError):
        GlyphSample(1, "w", np.full((3, 3), 255, np.uint8))
    with pytest.raises(ValueError):
        GlyphSample(1, "w", np.zeros((3, 3), np.float32))


def test_pgm_round_trip(tmp_path, rng):
    r = rng.integers(0, 256, size=(5, 7)).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", r)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n7 5\n255\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), r)


def test_corpus_save_load_and_corrupt_files(tmp_path):
    corpus = procedural_glyphs(1, 2, writers=2)
    save_glyph_corpus(corpus, tmp_path)
    (tmp_path / "3" / "broken__0.pgm").write_bytes(b"not an image")
    (tmp_path / "3" / "noname.pgm").write_bytes(b"P5\n1 1\n255\n\0")
    back = load_glyph_corpus(tmp_path)
    assert back.class_counts() == corpus.class_counts()
    assert len(back.warnings) == 2


def test_corpus_missing_class(tmp_path):
    corpus = GlyphCorpus([g for g in procedural_glyphs(1, 1).glyphs if g.digit_class != 4])
    save_glyph_corpus(corpus, tmp_path)
    with pytest.raises(CorpusIncompleteError):
        load_glyph_corpus(tmp_path)


def test_horizontal_iou():
    a, b = DigitBox(1, 0, 0, 10, 5), DigitBox(2, 5, 0, 10, 5)
    assert horizontal_iou(a, b) == pytest.approx(5 / 15)
    assert horizontal_iou(a, DigitBox(2, 10, 0, 3, 3)) == 0.0


def test_classify_contact_precedence():
    left, right = DigitBox(1, 0, 0, 10, 10), DigitBox(2, 9, 0, 10, 10)
    none = np.zeros((10, 20), bool)
    assert classify_contact(none, left, right) is ConnectionType.NONE
    point = none.copy()
    point[4:6, 9] = True
    assert classify_contact(point, left, right) is ConnectionType.I
    seg = none.copy()
    seg[2:8, 9] = True
    assert classify_contact(seg, left, right) is ConnectionType.II
    multi = none.copy()
    multi[1, 9] = multi[8, 9] = True
    assert classify_contact(multi, left, right) is ConnectionType.III
    assert classify_contact(point, left, DigitBox(2, 3, 0, 10, 10)) is ConnectionType.V


def test_connect_pair():
    left, right = _bar(10, 6, 3, 6), _bar(10, 6, 0, 2)
    canvas, boxes, kind = connect_pair(left, right, overlap=1, classes=(3, 4))
    assert canvas.shape == (10, 11)
    assert boxes[1].x == 5 and boxes[1].digit_class == 4
    assert kind is ConnectionType.II
    _, _, kind = connect_pair(left, right, overlap=0, gap=2)
    assert kind is ConnectionType.NONE
    with pytest.raises(ValueError):
        connect_pair(left, right, overlap=6)
    with pytest.raises(ValueError):
        connect_pair(left, right, overlap=1, gap=1)


def test_synthesis_config_validation():
    with pytest.raises(ValueError):
        SynthesisConfig(length_range=(3, 2))
    with pytest.raises(ValueError):
        SynthesisConfig(touching_fraction=1.5)
    with pytest.raises(ValueError):
        SynthesisConfig(class_weights=(1.0,) * 9)
    with pytest.raises(ValueError):
        SynthesisConfig(length_range=(2, 3), length_distribution=(1.0,))
    cfg = SynthesisConfig()
    assert cfg.lengths.tolist() == [2, 3, 4, 5, 6]
    assert cfg.class_probabilities()[1] == pytest.approx(0.6 / 9.6)


def test_split_policy():
    pol = SplitPolicy.proportional([str(i) for i in range(10)])
    assert [pol.split_of(str(i)) for i in range(10)] == ["train"] * 6 + ["validation"] * 2 + ["test"] * 2
    ranged = SplitPolicy.from_ranges({"train": (0, 4), "test": (5, 9)})
    assert ranged.split_of("7") == "test" and ranged.split_of("x") is None
    with pytest.raises(SplitPolicyError):
        SplitPolicy.from_ranges({"train": (0, 5), "test": (5, 9)})


def test_synth_dataset_consistency(small_corpus):
    cfg = SynthesisConfig(length_range=(2, 4), rng_seed=2, touching_fraction=0.5)
    m = synth_dataset(small_corpus, cfg, SplitPolicy.proportional(small_corpus.writers),
                      {"train": 60, "validation": 20, "test": 20})
    writers = {s: set() for s in ("train", "validation", "test")}
    for i, rec in enumerate(m.records):
        s = m.sample(i)
        assert "".join(str(b.digit_class) for b in s.boxes) == s.label
        assert 2 <= len(s.label) <= 4
        h, w = s.raster.shape
        for b in s.boxes:
            assert 0 <= b.x and b.x + b.w <= w and 0 <= b.y and b.y + b.h <= h
        writers[rec["split"]] |= set(rec["writers"])
    assert not writers["train"] & writers["test"]
    assert not writers["validation"] & writers["test"]
    assert m.distribution_summary["train"]["samples"] == 60
    assert m.distribution_summary["config"]["rng_seed"] == 2


def test_touching_pairs_share_ink(small_corpus):
    cfg = SynthesisConfig(length_range=(2, 2), rng_seed=3, touching_fraction=1.0)
    m = synth_dataset(small_corpus, cfg, SplitPolicy.proportional(small_corpus.writers), {"train": 30})
    touched = [s for s in m.samples() if s.touching[0].touching]
    assert len(touched) >= 25
    cfg = SynthesisConfig(length_range=(2, 2), rng_seed=3, touching_fraction=0.0)
    m = synth_dataset(small_corpus, cfg, SplitPolicy.proportional(small_corpus.writers), {"train": 30})
    assert all(s.touching == [ConnectionType.NONE] for s in m.samples())


def test_synth_dataset_is_order_independent(small_corpus):
    cfg = SynthesisConfig(length_range=(2, 3), rng_seed=9)
    pol = SplitPolicy.proportional(small_corpus.writers)
    a = synth_dataset(small_corpus, cfg, pol, {"train": 20, "test": 5})
    b = synth_dataset(small_corpus, cfg, pol, {"train": 20, "test": 5}, workers=4)
    c = synth_dataset(small_corpus, cfg, pol, {"test": 5})
    assert a.records == b.records
    assert a.records[20:] == [dict(r, image=r["image"]) for r in c.records]
    for x, y in zip(a.rasters[20:], c.rasters):
        assert np.array_equal(x, y)


def test_manifest_write_and_load(tmp_path, small_corpus):
    cfg = SynthesisConfig(length_range=(2, 3), rng_seed=1)
    pol = SplitPolicy.proportional(small_corpus.writers)
    m = synth_dataset(small_corpus, cfg, pol, {"train": 6, "test": 2}, out_dir=tmp_path / "ds")
    with pytest.raises(FileExistsError):
        synth_dataset(small_corpus, cfg, pol, {"train": 6}, out_dir=tmp_path / "ds")
    back = DatasetManifest.load(tmp_path / "ds")
    assert back.records == m.records
    for i in range(len(m)):
        np.testing.assert_array_equal(back.sample(i).raster, m.rasters[i])
    summary = json.loads((tmp_path / "ds" / "summary.json").read_text())
    assert summary["test"]["samples"] == 2
    (tmp_path / "ds" / back.records[0]["image"]).unlink()
    with pytest.raises(FileNotFoundError):
        DatasetManifest.load(tmp_path / "ds")


def test_unknown_split_and_empty_split(small_corpus):
    cfg = SynthesisConfig(length_range=(2, 3))
    with pytest.raises(SplitPolicyError):
        synth_dataset(small_corpus, cfg, SplitPolicy.proportional(small_corpus.writers), {"dev": 3})
    only_train = SplitPolicy(assignment={w: "train" for w in small_corpus.writers})
    with pytest.raises(SplitPolicyError):
        synth_dataset(small_corpus, cfg, only_train, {"test": 3})


def test_string_sample_validation():
    from hdsr.corpus import StringSample

    raster = np.full((10, 30), 255, np.uint8)
    with pytest.raises(ValueError):
        StringSample(raster, "12", [DigitBox(1, 0, 0, 5, 5)], frozenset(), [], "train")
    with pytest.raises(ValueError):
        StringSample(raster, "12", [DigitBox(1, 10, 0, 5, 5), DigitBox(2, 0, 0, 5, 5)], frozenset(),
                     [ConnectionType.NONE], "train")
