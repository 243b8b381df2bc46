import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdsr.nn import Network, ShapeError
from hdsr.sequencer import (
    SequenceRecognizer,
    crnn_spec,
    encode_recurrent,
    feasible,
    greedy_decode,
    map_to_sequence,
    sequence_batch_loss,
    transcribe,
    write_frame_dump,
)

symbols = st.lists(st.integers(0, 10), max_size=12)


def _collapse_oracle(seq):
    # itertools.groupby merges runs; blanks are then dropped
    return "".join(str(k) for k, _ in itertools.groupby(seq) if k != 10)


@given(symbols)
def test_transcribe_matches_groupby_oracle(seq):
    t = transcribe(seq)
    assert t.label == _collapse_oracle(seq)
    assert t.frame_alignment == seq
    assert len(t.label) <= len(seq)


@given(symbols)
def test_transcribe_is_idempotent_on_its_output(seq):
    lab = transcribe(seq).label
    again = transcribe([int(c) for c in lab]).label
    assert again == _collapse_oracle([int(c) for c in lab])


def test_transcribe_examples():
    assert transcribe([10, 10, 10]).label == ""
    assert transcribe([1, 1, 10, 1, 2, 2]).label == "112"
    assert transcribe([3, 10, 3]).alignment_string == "3-3"
    with pytest.raises(ValueError):
        transcribe([11])


def test_greedy_decode():
    frames = np.full((4, 11), 0.01)
    for t, s in enumerate([7, 7, 10, 2]):
        frames[t, s] = 0.9
    tr, p = greedy_decode(frames)
    assert tr.label == "72" and p == pytest.approx(0.9 ** 4)
    with pytest.raises(ShapeError):
        greedy_decode(np.zeros((3, 10)))


def test_map_to_sequence():
    fm = np.arange(24.0).reshape(1, 4, 6)
    assert map_to_sequence(fm).shape == (4, 6)
    assert map_to_sequence(fm[None]).shape == (1, 4, 6)
    with pytest.raises(ShapeError):
        map_to_sequence(np.zeros((2, 4, 6)))


def test_encode_recurrent_shapes_and_errors(rng):
    f, h = 5, 3
    w = {}
    for d in ("f", "b"):
        for name, shape in (("Wz", (f, h)), ("Uz", (h, h)), ("bz", (h,)), ("Wc", (f, h)), ("Uc", (h, h)), ("bc", (h,))):
            w[f"{name}_{d}"] = rng.normal(size=shape)
    out = encode_recurrent(rng.normal(size=(7, f)), w)
    assert out.shape == (7, 2 * h)
    assert encode_recurrent(rng.normal(size=(7, f)), w, bidirectional=False).shape == (7, h)
    with pytest.raises(ShapeError):
        encode_recurrent(rng.normal(size=(7, f + 1)), w)


def test_crnn_spec_collapses_height():
    net = Network(crnn_spec())
    assert net.output_shape == (16, 11)
    net = Network(crnn_spec(32, 64, (4, 4, 4, 4), 8))
    assert net.output_shape == (8, 11)


def test_feasible():
    assert feasible("12", 2) and not feasible("11", 2) and feasible("11", 3)


def test_batch_loss_averages(rng):
    logits = rng.normal(size=(2, 6, 11))
    total, g = sequence_batch_loss(logits, ["12", "3"])
    from hdsr.losses import sequence_loss_logits

    ref = (sequence_loss_logits(logits[0], "12")[0] + sequence_loss_logits(logits[1], "3")[0]) / 2
    assert total == pytest.approx(ref)
    assert g.shape == logits.shape


def test_frame_dump(tmp_path):
    frames = np.full((3, 11), 1 / 11)
    write_frame_dump(frames, tmp_path / "f.csv")
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["frame"] + [str(i) for i in range(10)] + ["-"]
    assert len(rows) == 4


def test_recognizer_fit_save_load(tmp_path, small_corpus):
    from hdsr.corpus import SplitPolicy, SynthesisConfig, synth_dataset

    m = synth_dataset(small_corpus, SynthesisConfig(length_range=(2, 3), rng_seed=6),
                      SplitPolicy.proportional(small_corpus.writers), {"train": 40, "validation": 10})
    X, y = m.images_and_labels("train")
    Xv, yv = m.images_and_labels("validation")
    est = SequenceRecognizer(filters=(4, 8, 8, 8), hidden=8, max_epochs=1, batch_size=16)
    est.fit(X, y, eval_set=(Xv, yv))
    assert est.n_frames == 16
    frames = est.predict_frames(Xv)
    np.testing.assert_allclose(frames.sum(axis=-1), 1.0)
    for (tr, p), f in zip(est.decode(Xv), frames):
        assert p == pytest.approx(float(np.prod(f.max(axis=1))))
    assert math.isfinite(est.loss(Xv, yv))
    est.save(tmp_path / "seq")
    back = SequenceRecognizer.load(tmp_path / "seq")
    assert back.predict(Xv) == est.predict(Xv)


def test_recognizer_skips_infeasible_labels(small_corpus):
    from hdsr.corpus import SplitPolicy, SynthesisConfig, synth_dataset

    m = synth_dataset(small_corpus, SynthesisConfig(length_range=(2, 3), rng_seed=6),
                      SplitPolicy.proportional(small_corpus.writers), {"train": 12})
    X, y = m.images_and_labels("train")
    y = list(y)
    y[0] = "1" * 12  # needs 23 frames, the network has 4
    est = SequenceRecognizer(input_width=32, filters=(4, 4, 4, 4), hidden=4, max_epochs=1,
                             validation_fraction=0.25)
    est.fit(X, y)
    assert est.skipped_ >= 1
