import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdsr.selector import (
    REJECTED,
    SINGLE,
    TWO_MAX,
    ComponentClassifier,
    FusionOutcome,
    SelectorEnsemble,
    assemble,
    binarize,
    class_index,
    component_labels,
    fuse,
    index_label,
    read_fusion,
    segment_components,
    write_fusion,
)


@given(st.text("0123456789", min_size=1, max_size=3))
def test_class_index_round_trip(label):
    assert index_label(class_index(label)) == label


def test_class_index_ranges():
    assert class_index("7") == 7
    assert class_index("00") == 10 and class_index("99") == 109
    assert class_index("000") == 110 and class_index("999") == 1109
    for bad in ("", "1234", "1a"):
        with pytest.raises(ValueError):
            class_index(bad)
    with pytest.raises(ValueError):
        index_label(1110)


def _onehot(n, k, p):
    v = np.full(n, (1 - p) / (n - 1))
    v[k] = p
    return v


def test_fuse_worked_examples():
    out = fuse([0.95, 0.03, 0.01, 0.01], {1: _onehot(10, 4, 0.7), 2: _onehot(100, 12, 0.9)}, 0.9)
    assert (out.branch, out.label) == (SINGLE, "4")
    out = fuse([0.5, 0.45, 0.03, 0.02], {1: _onehot(10, 4, 0.6), 2: _onehot(100, 12, 0.8)}, 0.9)
    assert (out.branch, out.label, out.class_index) == (TWO_MAX, "12", 22)
    assert out.score == pytest.approx(0.8)


def test_fuse_missing_classifier_rejects():
    out = fuse([0.1, 0.1, 0.1, 0.7], {1: _onehot(10, 1, 0.9), 2: _onehot(100, 1, 0.9)}, 0.5)
    assert out.rejected and out.branch == REJECTED
    out = fuse([0.45, 0.05, 0.05, 0.45], {1: _onehot(10, 1, 0.9)}, 0.5)
    assert out.rejected


def _fuse_oracle(lout, best, T):
    """Direct transliteration of the selection rule on per-length best scores."""
    ranked = sorted(range(4), key=lambda k: (-lout[k], k))
    top1, top2 = ranked[0] + 1, ranked[1] + 1
    if max(lout) < T:
        if top1 not in best or top2 not in best:
            return None
        return top2 if best[top2] > best[top1] else top1
    return top1 if top1 in best else None


def test_fuse_agrees_with_oracle_on_grid():
    levels = [0.0, 0.1, 0.25, 0.4, 0.5]
    scores = [0.3, 0.6, 0.9]
    for a, b, c in itertools.product(levels, repeat=3):
        lout = np.array([a, b, c, 0.05])
        for s1, s2 in itertools.product(scores, repeat=2):
            outs = {1: _onehot(10, 3, s1), 2: _onehot(100, 45, s2)}
            for T in (0.0, 0.3, 0.5, 1.0):
                want = _fuse_oracle(lout, {1: s1, 2: s2}, T)
                got = fuse(lout, outs, T)
                if want is None:
                    assert got.rejected
                else:
                    assert len(got.label) == want


def test_fuse_threshold_boundaries():
    lout = [0.6, 0.4, 0.0, 0.0]
    outs = {1: _onehot(10, 1, 0.2), 2: _onehot(100, 33, 0.9)}
    assert fuse(lout, outs, 0.0).branch == SINGLE
    assert fuse(lout, outs, 1.0).branch == TWO_MAX and fuse(lout, outs, 1.0).label == "33"
    assert fuse(lout, outs, 0.6).branch == SINGLE  # strict comparison


def test_fuse_input_validation():
    with pytest.raises(ValueError):
        fuse([1.0, 0.0], {}, 0.5)


def test_assemble():
    outs = [FusionOutcome(1, "1", SINGLE, 0.5), FusionOutcome(23, "13", TWO_MAX, 0.4)]
    pred = assemble(outs)
    assert pred.label == "113" and pred.probability == pytest.approx(0.2) and not pred.rejected
    pred = assemble(outs + [FusionOutcome(None, "", REJECTED, 0.0)])
    assert pred.rejected and pred.label == "113"


def _blob_image():
    im = np.full((20, 40), 255, np.uint8)
    im[5:15, 2:8] = 0       # component A
    im[5:15, 12:16] = 0     # component B
    im[5:15, 16:22] = 30    # touches B -> same component
    im[2, 30] = 0           # speck
    im[5:15, 30:34] = 0     # component C
    return im


def test_binarize_and_segmentation():
    im = _blob_image()
    mask = binarize(im)
    assert mask[6, 3] and not mask[0, 0]
    comps = segment_components(im)
    assert [c.x for c in comps] == sorted(c.x for c in comps)
    assert len(comps) == 3
    assert comps[1].area == 10 * 10
    assert not binarize(np.full((4, 4), 255, np.uint8)).any()


def test_segmentation_is_four_connected():
    im = np.full((6, 6), 255, np.uint8)
    im[1:3, 1:3] = 0
    im[3:5, 3:5] = 0   # diagonal neighbour only
    assert len(segment_components(im, speck_area=1)) == 2


def test_component_labels_follow_boxes():
    im = _blob_image()
    boxes = [(2, 5, 6, 10, 4), (12, 5, 4, 10, 1), (16, 5, 6, 10, 7), (30, 5, 4, 10, 9)]
    labs = [lab for _, lab in component_labels(im, boxes)]
    assert labs == ["4", "17", "9"]


def test_fusion_file_round_trip(tmp_path):
    curve = [(0.0, 0.5), (0.05, 0.75)]
    write_fusion(tmp_path / "f.txt", 0.05, curve)
    assert (tmp_path / "f.txt").read_text().splitlines()[0] == "T=0.05"
    assert read_fusion(tmp_path / "f.txt") == (0.05, curve)
    (tmp_path / "g.txt").write_text("oops\n")
    with pytest.raises(ValueError):
        read_fusion(tmp_path / "g.txt")


def test_component_classifier_learns_bars():
    rng = np.random.default_rng(0)
    X, y = [], []
    for i in range(120):
        k = i % 2
        im = np.full((20, 20), 255, np.uint8)
        off = rng.integers(2, 6)
        if k:
            im[off:off + 10, 8:11] = 0
        else:
            im[8:11, off:off + 10] = 0
        X.append(im)
        y.append(k)
    clf = ComponentClassifier(n_classes=2, filters=(4, 8, 8), max_epochs=5, batch_size=16, lr_initial=1e-2,
                              lr_final=5e-3)
    clf.fit(X, y)
    assert clf.score(X, y) >= 0.95
    np.testing.assert_allclose(clf.predict_proba(X[:3]).sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        clf.fit(X, [5] * len(X))


def test_ensemble_fit_save_load(tmp_path, small_corpus):
    from hdsr.corpus import SplitPolicy, SynthesisConfig, synth_dataset

    m = synth_dataset(small_corpus, SynthesisConfig(length_range=(2, 3), rng_seed=4, touching_fraction=0.3),
                      SplitPolicy.proportional(small_corpus.writers), {"train": 40, "validation": 10})
    X, y = m.images_and_boxes("train")
    Xv, yv = m.images_and_labels("validation")
    ens = SelectorEnsemble(max_epochs=1).fit(X, y, eval_set=(Xv, yv))
    assert 0.0 <= ens.threshold_ <= 1.0
    assert [t for t, _ in ens.curve_] == pytest.approx([round(0.05 * k, 2) for k in range(21)])
    best = max(acc for _, acc in ens.curve_)
    assert ens.threshold_ == min(t for t, acc in ens.curve_ if acc == best)
    ens.save(tmp_path / "sel")
    back = SelectorEnsemble.load(tmp_path / "sel")
    assert back.predict(Xv) == ens.predict(Xv)
    assert back.threshold_ == ens.threshold_
    outcomes = ens.explain(Xv[0])
    assert all(o.branch in (SINGLE, TWO_MAX, REJECTED) for o in outcomes)
