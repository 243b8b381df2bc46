import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from hdsr.evalbench import (
    CLASSIFICATION_ERROR,
    CORRECT,
    DETECTION_ERROR,
    CSV_HEADER,
    EvalRecord,
    connection_buckets,
    error_taxonomy,
    outcome_counts,
    parse_csv_report,
    parse_summary_line,
    recognition_rate,
    render_report,
    tp_protocol,
)

digits = st.text("0123456789", min_size=1, max_size=6)


@given(digits, st.text("0123456789", max_size=7), st.booleans())
def test_taxonomy_is_a_partition(gold, pred, rejected):
    r = EvalRecord(gold, pred, rejected=rejected)
    kind = error_taxonomy(r)
    if rejected:
        assert kind == DETECTION_ERROR
    elif pred == gold:
        assert kind == CORRECT
    elif len(pred) == len(gold):
        assert kind == CLASSIFICATION_ERROR
    else:
        assert kind == DETECTION_ERROR


def test_empty_gold_rejected():
    with pytest.raises(ValueError):
        EvalRecord("", "1")


def test_connection_buckets():
    assert connection_buckets(EvalRecord("12", "12")) == ["untyped"]
    assert connection_buckets(EvalRecord("123", "1", ["NONE", "NONE"])) == ["NONE"]
    assert connection_buckets(EvalRecord("123", "1", ["II", "I"])) == ["I", "II"]
    ok, buckets = tp_protocol(EvalRecord("123", "123", ["V", "NONE"]))
    assert ok and buckets == ["V"]


def _records():
    return [
        EvalRecord("12", "12", ["NONE"]),
        EvalRecord("34", "35", ["I"]),
        EvalRecord("567", "56", ["NONE", "II"]),
        EvalRecord("890", "890", ["NONE", "NONE"]),
        EvalRecord("11", "11", ["V"], rejected=True),
    ]


def test_report_counts_by_hand():
    rep = recognition_rate(_records())
    assert rep.overall.samples == 5
    assert rep.recognition_rate == pytest.approx(40.0)
    assert rep.classification_error == pytest.approx(20.0)
    assert rep.detection_error == pytest.approx(40.0)
    assert rep.per_length[2].samples == 3 and rep.per_length[2].correct == 1
    assert rep.per_length[3].recognition == pytest.approx(50.0)
    # the average row is a micro-average over samples
    assert rep.overall.correct == sum(t.correct for t in rep.per_length.values())
    assert rep.per_connection["NONE"].samples == 2
    assert rep.per_connection["II"].detection == 1
    assert len(rep.errors) == 3
    assert outcome_counts(_records()) == {CORRECT: 2, CLASSIFICATION_ERROR: 1, DETECTION_ERROR: 2}


def test_render_formats_round_trip():
    rep = recognition_rate(_records())
    text = render_report(rep, "text").decode()
    last = text.strip().splitlines()[-1]
    assert parse_summary_line(last) == {"RECOG": 40.0, "CLS_ERR": 20.0, "DET_ERR": 40.0}
    rows = parse_csv_report(render_report(rep, "csv"))
    assert list(rows[0]) == CSV_HEADER
    assert rows[-1]["length"] == "Average" and rows[-1]["samples"] == 5
    data = json.loads(render_report(rep, "json"))
    assert data["overall"]["recognition"] == 40.0
    with pytest.raises(ValueError):
        render_report(rep, "xml")


def test_render_is_deterministic():
    assert render_report(recognition_rate(_records()), "json") == render_report(recognition_rate(_records()), "json")


def test_no_records():
    with pytest.raises(ValueError):
        recognition_rate([])


def test_parse_summary_line_rejects_garbage():
    with pytest.raises(ValueError):
        parse_summary_line("RECOG=1 FOO=2")


single_type_records = st.lists(
    st.tuples(st.text("0123", min_size=2, max_size=4), st.text("0123", max_size=4),
              st.sampled_from(["NONE", "I", "II", "III", "V"]), st.booleans()),
    min_size=1, max_size=30,
)


@given(single_type_records)
def test_bucket_totals_sum_to_overall_for_single_type_records(rows):
    records = []
    for gold, pred, tag, rejected in rows:
        # every pair untouched, or every touching pair of one type
        tags = ["NONE"] * (len(gold) - 1) if tag == "NONE" else [tag] + ["NONE"] * (len(gold) - 2)
        records.append(EvalRecord(gold, pred, tags, rejected=rejected))
    rep = recognition_rate(records)
    buckets = rep.per_connection.values()
    assert sum(b.samples for b in buckets) == rep.overall.samples
    assert sum(b.correct for b in buckets) == rep.overall.correct
    assert sum(b.detection for b in buckets) == rep.overall.detection


@given(single_type_records, st.randoms(use_true_random=False))
def test_report_is_permutation_invariant(rows, rnd):
    records = [EvalRecord(g, p, None, rejected=r) for g, p, _, r in rows]
    shuffled = list(records)
    rnd.shuffle(shuffled)
    assert render_report(recognition_rate(records), "csv") == render_report(recognition_rate(shuffled), "csv")
