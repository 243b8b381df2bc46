"""Exact-match scoring with the detection/classification error split."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field

CORRECT = "correct"
DETECTION_ERROR = "detection_error"
CLASSIFICATION_ERROR = "classification_error"
OUTCOMES = (CORRECT, CLASSIFICATION_ERROR, DETECTION_ERROR)
UNTYPED = "untyped"
CSV_HEADER = ["length", "samples", "recognition", "cls_err", "det_err"]


@dataclass
class EvalRecord:
    gold: str
    predicted: str
    touching: list[str] | None = None
    rejected: bool = False
    image: str | None = None
    gold_boxes: list | None = None
    detections: list | None = None

    def __post_init__(self):
        self.gold = str(self.gold)
        self.predicted = "" if self.predicted is None else str(self.predicted)
        if not self.gold:
            raise ValueError("gold label must be non-empty")

    @property
    def length(self):
        return len(self.gold)


def error_taxonomy(record: EvalRecord) -> str:
    """Exactly one of correct, detection_error (wrong length or rejected)
    and classification_error (right length, wrong digits)."""
    if record.rejected:
        return DETECTION_ERROR
    if record.predicted == record.gold:
        return CORRECT
    if len(record.predicted) != len(record.gold):
        return DETECTION_ERROR
    return CLASSIFICATION_ERROR


def connection_buckets(record: EvalRecord) -> list[str]:
    """Connection-type buckets a record is credited to (one per distinct
    touching tag; ``NONE`` for strings with no touching pair)."""
    if record.touching is None:
        return [UNTYPED]
    tags = sorted({str(t) for t in record.touching if str(t) != "NONE"})
    return tags or ["NONE"]


def tp_protocol(record: EvalRecord) -> tuple[bool, list[str]]:
    """Correct iff the digit count and every class match; plus the
    connection buckets the outcome is tallied into."""
    return error_taxonomy(record) == CORRECT, connection_buckets(record)


@dataclass
class Tally:
    samples: int = 0
    correct: int = 0
    classification: int = 0
    detection: int = 0

    def add(self, outcome: str):
        self.samples += 1
        if outcome == CORRECT:
            self.correct += 1
        elif outcome == CLASSIFICATION_ERROR:
            self.classification += 1
        else:
            self.detection += 1

    def _pct(self, k):
        return 100.0 * k / self.samples if self.samples else 0.0

    @property
    def recognition(self):
        return self._pct(self.correct)

    @property
    def cls_err(self):
        return self._pct(self.classification)

    @property
    def det_err(self):
        return self._pct(self.detection)


@dataclass
class EvalReport:
    overall: Tally
    per_length: dict[int, Tally]
    per_connection: dict[str, Tally]
    errors: list[dict] = field(default_factory=list)

    @property
    def recognition_rate(self):
        return self.overall.recognition

    @property
    def classification_error(self):
        return self.overall.cls_err

    @property
    def detection_error(self):
        return self.overall.det_err

    def summary_line(self) -> str:
        o = self.overall
        return f"RECOG={o.recognition:.1f} CLS_ERR={o.cls_err:.1f} DET_ERR={o.det_err:.1f}"


def recognition_rate(records) -> EvalReport:
    """Aggregate records into overall, per-length and per-connection tallies.

    The overall row is a micro-average over samples.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to evaluate")
    overall = Tally()
    per_length: dict[int, Tally] = {}
    per_conn: dict[str, Tally] = {}
    errors = []
    for r in records:
        outcome = error_taxonomy(r)
        overall.add(outcome)
        per_length.setdefault(r.length, Tally()).add(outcome)
        for b in connection_buckets(r):
            per_conn.setdefault(b, Tally()).add(outcome)
        if outcome != CORRECT:
            errors.append({"image": r.image, "gold": r.gold, "predicted": r.predicted,
                           "outcome": outcome, "rejected": r.rejected})
    errors.sort(key=lambda e: (e["gold"], e["predicted"], e["outcome"], str(e["image"])))
    return EvalReport(overall, dict(sorted(per_length.items())), dict(sorted(per_conn.items())), errors)


def _row(name, t: Tally):
    return [str(name), str(t.samples), f"{t.recognition:.1f}", f"{t.cls_err:.1f}", f"{t.det_err:.1f}"]


def render_report(report: EvalReport, fmt: str = "text") -> bytes:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for n, t in report.per_length.items():
            w.writerow(_row(n, t))
        w.writerow(_row("Average", report.overall))
        return buf.getvalue().encode("utf-8")
    if fmt == "json":
        return (json.dumps(report_dict(report), indent=2, sort_keys=True) + "\n").encode("utf-8")
    if fmt != "text":
        raise ValueError(f"unknown report format {fmt!r}")
    lines = [f"{'Length':>8} {'Samples':>8} {'Recog %':>8} {'Cls err':>8} {'Det err':>8}"]
    for n, t in report.per_length.items():
        lines.append("{:>8} {:>8} {:>8} {:>8} {:>8}".format(*_row(n, t)))
    lines.append("{:>8} {:>8} {:>8} {:>8} {:>8}".format(*_row("Average", report.overall)))
    if report.per_connection and set(report.per_connection) != {UNTYPED}:
        lines += ["", f"{'Connect':>8} {'Samples':>8} {'Recog %':>8} {'Cls err':>8} {'Det err':>8}"]
        for b, t in report.per_connection.items():
            lines.append("{:>8} {:>8} {:>8} {:>8} {:>8}".format(*_row(b, t)))
    lines += ["", report.summary_line()]
    return ("\n".join(lines) + "\n").encode("utf-8")


def report_dict(report: EvalReport) -> dict:
    def tally(t):
        return {"samples": t.samples, "recognition": t.recognition, "cls_err": t.cls_err, "det_err": t.det_err}

    return {
        "overall": tally(report.overall),
        "per_length": {str(k): tally(v) for k, v in report.per_length.items()},
        "per_connection": {k: tally(v) for k, v in report.per_connection.items()},
        "errors": report.errors,
    }


def parse_summary_line(line: str) -> dict[str, float]:
    fields = dict(part.split("=", 1) for part in line.split())
    if set(fields) != {"RECOG", "CLS_ERR", "DET_ERR"}:
        raise ValueError(f"not a summary line: {line!r}")
    return {k: float(v) for k, v in fields.items()}


def parse_csv_report(data: bytes) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(data.decode("utf-8"))))
    for r in rows:
        r["samples"] = int(r["samples"])
        for k in ("recognition", "cls_err", "det_err"):
            r[k] = float(r[k])
    return rows


def outcome_counts(records) -> Counter:
    return Counter(error_taxonomy(r) for r in records)


def records_from_predictions(samples, predictions, images=None) -> list[EvalRecord]:
    """Pair gold ``StringSample``s with predictions (labels or ``StringPrediction``)."""
    out = []
    for i, (s, p) in enumerate(zip(samples, predictions)):
        label = p if isinstance(p, str) else p.label
        rejected = False if isinstance(p, str) else bool(getattr(p, "rejected", False))
        dets = None if isinstance(p, str) else [d.to_json() for d in getattr(p, "detections", [])]
        out.append(EvalRecord(s.label, label, [str(t) for t in s.touching], rejected,
                              images[i] if images else None, None, dets))
    return out


__all__ = [
    "CLASSIFICATION_ERROR", "CORRECT", "CSV_HEADER", "DETECTION_ERROR", "EvalRecord", "EvalReport",
    "Tally", "UNTYPED", "connection_buckets", "error_taxonomy", "outcome_counts", "parse_csv_report",
    "parse_summary_line", "records_from_predictions", "recognition_rate", "render_report", "report_dict",
    "tp_protocol",
]
