"""Command-line entry point: ``hdsr <command> [options]``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .corpus import (
    CorpusIncompleteError,
    DatasetManifest,
    SplitPolicy,
    SplitPolicyError,
    SynthesisConfig,
    load_glyph_corpus,
    procedural_glyphs,
    synth_dataset,
)
from .detector import AnchorSet, DigitStringDetector, cluster_anchors
from .detector.resize import PUBLISHED_WIDTHS, ResizePolicy, input_width_rule
from .evalbench import records_from_predictions, recognition_rate, render_report
from .nn import NumericalError
from .selector import SelectorEnsemble
from .sequencer import SequenceRecognizer, write_frame_dump

log = logging.getLogger("hdsr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
HEADS = {"detector": DigitStringDetector, "sequencer": SequenceRecognizer, "selector": SelectorEnsemble}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _range(text):
    try:
        lo, _, hi = text.partition("-")
        lo, hi = int(lo), int(hi or lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN-MAX, got {text!r}") from None
    return lo, hi


def _grid(text):
    try:
        cx, cy = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected COLSxROWS, got {text!r}") from None
    return cx, cy


def _writer_ranges(text):
    out = {}
    for part in text.split(","):
        name, _, span = part.partition("=")
        out[name.strip()] = _range(span)
    return out


# -- parser ----------------------------------------------------------------

def _train_options(p):
    g = p.add_argument_group("training")
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--weight-decay", type=float, default=5e-4)
    g.add_argument("--lr-initial", type=float, default=1e-3)
    g.add_argument("--lr-final", type=float, default=5e-4)
    g.add_argument("--patience", type=int, default=5)
    g.add_argument("--max-epochs", type=int, default=30)
    g.add_argument("--clip-norm", type=float, default=None)
    g.add_argument("--warmup-steps", type=int, default=0)


def _detector_options(p):
    g = p.add_argument_group("detector")
    g.add_argument("--grid", type=_grid, default=(12, 4), help="cells as COLSxROWS (default 12x4)")
    g.add_argument("--input-size", type=_grid, default=(96, 32), help="network input WxH (default 96x32)")
    g.add_argument("--conf", type=float, default=0.5, help="confidence threshold used with --no-tune-conf")
    g.add_argument("--no-tune-conf", dest="tune_conf", action="store_false",
                   help="keep --conf instead of picking the threshold on validation data")
    g.add_argument("--nms-iou", type=float, default=0.45)
    g.add_argument("--anchors-file", default=None)
    g.add_argument("--objectness", choices=["focal", "ce"], default="focal")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hdsr", description="Handwritten digit string recognition laboratory.")
    p.add_argument("--log-level", default="INFO")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="compose a synthetic string dataset")
    s.add_argument("--out", required=False)
    s.add_argument("--corpus", default=None, help="glyph corpus directory (default: procedural glyphs)")
    s.add_argument("--glyphs-per-class", type=int, default=600)
    s.add_argument("--glyph-writers", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=1000, help="training strings")
    s.add_argument("--val-count", type=int, default=None, help="validation strings (default count/4)")
    s.add_argument("--test-count", type=int, default=None, help="test strings (default count/4)")
    s.add_argument("--lengths", type=_range, default=(2, 6))
    s.add_argument("--length-weights", default=None, help="comma-separated relative frequencies")
    s.add_argument("--touching", type=float, default=0.15)
    s.add_argument("--overlap", type=_range, default=(1, 6))
    s.add_argument("--one-weight", type=float, default=0.6, help="relative frequency of digit 1")
    s.add_argument("--writer-ranges", type=_writer_ranges, default=None,
                   help="e.g. train=1000-1599,validation=1600-1799,test=1800-1999")
    s.add_argument("--png", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--force", action="store_true")

    a = sub.add_parser("anchors", help="cluster anchor shapes from a manifest")
    a.add_argument("--manifest", required=False)
    a.add_argument("--out", required=False)
    a.add_argument("--k", type=int, default=3)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--split", default="train")
    a.add_argument("--input-size", type=_grid, default=(96, 32))
    a.add_argument("--force", action="store_true")

    t = sub.add_parser("train", help="train a recognizer")
    t.add_argument("--head", default="detector")
    t.add_argument("--manifest", required=False)
    t.add_argument("--out", required=False, help="run directory")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--force", action="store_true")
    t.add_argument("--workers", type=int, default=1)
    _train_options(t)
    _detector_options(t)
    t.add_argument("--use-c3", action="store_true", help="selector: train the three-digit classifier")

    e = sub.add_parser("eval", help="score a trained model or a prediction file")
    e.add_argument("--model", default=None, help="run directory from 'train'")
    e.add_argument("--predictions", default=None, help="detection dump or {image,label} lines")
    e.add_argument("--manifest", required=False)
    e.add_argument("--split", default="test")
    e.add_argument("--out", default=None, help="directory for report.txt / report.csv")
    e.add_argument("--conf", type=float, default=None)
    e.add_argument("--nms-iou", type=float, default=None)
    e.add_argument("--force", action="store_true")

    d = sub.add_parser("decode", help="write predictions for a manifest split")
    d.add_argument("--model", required=False)
    d.add_argument("--manifest", required=False)
    d.add_argument("--split", default="test")
    d.add_argument("--out", required=False, help="line-delimited prediction file")
    d.add_argument("--frames-dir", default=None, help="sequencer: per-image frame CSVs")
    d.add_argument("--conf", type=float, default=None)
    d.add_argument("--nms-iou", type=float, default=None)
    d.add_argument("--force", action="store_true")

    r = sub.add_parser("resize", help="network input width for a source string width")
    r.add_argument("width", help="source string width in pixels")

    st = sub.add_parser("selftest", help="run invariant checks on procedural data")
    st.add_argument("--seed", type=int, default=0)

    for sp in (s, a, t, e, d, st):
        sp.add_argument("--config", default=None, help="JSON file of option values")
    return p


def _dests(parser):
    return {a.dest for a in parser._actions if a.dest not in ("help", "config")}


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("hdsr: a command is required (synth, anchors, train, eval, decode, resize, selftest)")
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path) as fh:
            cfg = json.load(fh)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = _dests(sub)
        unknown = sorted(set(k.replace("-", "_") for k in cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        for action in sub._actions:
            key = action.dest
            if key in {k.replace("-", "_") for k in cfg} and action.type is not None:
                raw = cfg.get(key, cfg.get(key.replace("_", "-")))
                if isinstance(raw, str):
                    cfg[key] = action.type(raw)
        sub.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _effective(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("config", "log_level"):
            continue
        out[k] = list(v) if isinstance(v, tuple) else v
    return out


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fresh_output(path: Path, force: bool, what="output"):
    if path.exists() and any(path.iterdir() if path.is_dir() else [path]):
        if not force:
            raise FileExistsError(f"{what} {path} already exists; pass --force to overwrite")


# -- commands --------------------------------------------------------------

def cmd_synth(args):
    _require(args, "out")
    if args.corpus:
        corpus = load_glyph_corpus(args.corpus)
    else:
        corpus = procedural_glyphs(args.seed, args.glyphs_per_class, writers=args.glyph_writers)
    weights = [1.0] * 10
    weights[1] = args.one_weight
    ld = None if args.length_weights is None else tuple(float(v) for v in args.length_weights.split(","))
    cfg = SynthesisConfig(length_range=tuple(args.lengths), touching_fraction=args.touching,
                          overlap_range=tuple(args.overlap), class_weights=tuple(weights),
                          length_distribution=ld, rng_seed=args.seed)
    if args.writer_ranges:
        policy = SplitPolicy.from_ranges(args.writer_ranges)
    else:
        policy = SplitPolicy.proportional(corpus.writers)
    quarter = max(1, args.count // 4)
    counts = {"train": args.count,
              "validation": quarter if args.val_count is None else args.val_count,
              "test": quarter if args.test_count is None else args.test_count}
    out = Path(args.out)
    manifest = synth_dataset(corpus, cfg, policy, counts, out_dir=out, png=args.png,
                             workers=args.workers, force=args.force)
    _write_json(out / "run_config.json", _effective(args))
    for split, info in manifest.distribution_summary.items():
        if split != "config":
            print(f"{split}: {info['samples']} strings, touching rate {info['touching_rate']:.3f}")
    print(f"wrote {len(manifest)} strings to {out}")
    return EXIT_OK


def _scaled_shapes(samples, input_w, input_h):
    shapes = []
    for s in samples:
        h, w = s.raster.shape
        scale = min(input_h / h, input_w / w)
        shapes += [(b.w / b.h, b.h * scale / input_h) for b in s.boxes]
    return np.array(shapes[:10000])


def cmd_anchors(args):
    _require(args, "manifest", "out")
    out = Path(args.out)
    _fresh_output(out, args.force, "anchor file")
    manifest = DatasetManifest.load(args.manifest)
    samples = manifest.samples(args.split)
    if not samples:
        raise ValueError(f"manifest has no {args.split!r} samples")
    anchors = cluster_anchors(_scaled_shapes(samples, *args.input_size), args.k, seed=args.seed)
    anchors.save(out)
    for r, h in anchors.anchors:
        print(f"ratio {r:.3f} height {h:.3f}")
    return EXIT_OK


def _make_estimator(args):
    train_kw = dict(batch_size=args.batch_size, momentum=args.momentum, weight_decay=args.weight_decay,
                    lr_initial=args.lr_initial, lr_final=args.lr_final, patience=args.patience,
                    max_epochs=args.max_epochs, random_state=args.seed)
    if args.head == "detector":
        anchors = AnchorSet.load(args.anchors_file) if args.anchors_file else None
        cx, cy = args.grid
        w, h = args.input_size
        return DigitStringDetector(cells_x=cx, cells_y=cy, input_width=w, input_height=h,
                                   anchors=anchors, conf_threshold=args.conf, tune_conf=args.tune_conf,
                                   nms_iou=args.nms_iou,
                                   objectness=args.objectness, clip_norm=args.clip_norm,
                                   warmup_steps=args.warmup_steps, **train_kw)
    if args.head == "sequencer":
        return SequenceRecognizer(**train_kw)
    return SelectorEnsemble(use_c3=args.use_c3, max_epochs=args.max_epochs, lr_initial=args.lr_initial,
                            lr_final=args.lr_final, clip_norm=args.clip_norm, warmup_steps=args.warmup_steps,
                            patience=args.patience, random_state=args.seed)


def cmd_train(args):
    _require(args, "manifest", "out")
    if args.head not in HEADS:
        raise UsageError(f"unknown head {args.head!r}; choose from {', '.join(HEADS)}")
    run = Path(args.out)
    if run.exists() and any(run.iterdir()) and not (args.force or args.resume):
        raise FileExistsError(f"run directory {run} is not empty; pass --resume or --force")
    run.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest.load(args.manifest)
    _write_json(run / "config.json", _effective(args))
    est = _make_estimator(args)
    start = time.time()
    if args.head == "detector":
        X, y = manifest.images_and_boxes("train")
        eval_set = manifest.images_and_boxes("validation")
        est.fit(X, y, eval_set=eval_set if eval_set[0] else None,
                checkpoint=str(run / "checkpoint.pkl"), resume=args.resume)
    elif args.head == "sequencer":
        X, y = manifest.images_and_labels("train")
        eval_set = manifest.images_and_labels("validation")
        est.fit(X, y, eval_set=eval_set if eval_set[0] else None,
                checkpoint=str(run / "checkpoint.pkl"), resume=args.resume)
    else:
        X, y = manifest.images_and_boxes("train")
        eval_set = manifest.images_and_boxes("validation")
        est.fit(X, y, eval_set=eval_set if eval_set[0] else None)
    est.save(run / "model")
    print(f"trained {args.head} in {time.time() - start:.1f}s; bundle at {run / 'model'}")
    return EXIT_OK


def load_model(path):
    d = Path(path)
    model_dir = d / "model" if (d / "model" / "config.json").exists() else d
    with open(model_dir / "config.json") as fh:
        head = json.load(fh).get("head")
    if head not in HEADS:
        raise ValueError(f"{model_dir} does not hold a trained model bundle")
    return head, HEADS[head].load(model_dir)


def _apply_thresholds(head, est, args):
    if head != "detector":
        return
    est.set_thresholds(args.conf, args.nms_iou)


def _predict(head, est, images):
    if head == "sequencer":
        from .detector.geometry import StringPrediction
        return [StringPrediction(t.label, p, [], False) for t, p in est.decode(images)]
    return est.predict_strings(images)


def _read_predictions(path):
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "label" in rec:
                label = str(rec["label"])
            else:
                dets = sorted(rec["detections"], key=lambda d: (d["x"] + d["w"] / 2, d["x"], -d["score"]))
                label = "".join(str(int(d["c"])) for d in dets)
            preds[rec["image"]] = (label, bool(rec.get("rejected", False)))
    return preds


def cmd_eval(args):
    _require(args, "manifest")
    if bool(args.model) == bool(args.predictions):
        raise UsageError("give exactly one of --model or --predictions")
    manifest = DatasetManifest.load(args.manifest)
    idx = [i for i, r in enumerate(manifest.records) if r["split"] == args.split]
    if not idx:
        raise ValueError(f"manifest has no {args.split!r} samples")
    samples = [manifest.sample(i) for i in idx]
    names = [manifest.records[i]["image"] for i in idx]
    if args.model:
        head, est = load_model(args.model)
        _apply_thresholds(head, est, args)
        preds = _predict(head, est, [s.raster for s in samples])
    else:
        table = _read_predictions(args.predictions)
        missing = [n for n in names if n not in table]
        if missing:
            raise ValueError(f"{len(missing)} manifest images have no prediction (first: {missing[0]})")
        from .detector.geometry import StringPrediction
        preds = [StringPrediction(table[n][0], 1.0, [], table[n][1]) for n in names]
    report = recognition_rate(records_from_predictions(samples, preds, names))
    text = render_report(report, "text")
    if args.out:
        out = Path(args.out)
        if out.exists() and (out / "report.txt").exists() and not args.force:
            raise FileExistsError(f"{out} already holds a report; pass --force to overwrite")
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_bytes(text)
        (out / "report.csv").write_bytes(render_report(report, "csv"))
        (out / "report.json").write_bytes(render_report(report, "json"))
    sys.stdout.write(text.decode("utf-8"))
    return EXIT_OK


def cmd_decode(args):
    _require(args, "model", "manifest", "out")
    out = Path(args.out)
    _fresh_output(out, args.force, "prediction file")
    head, est = load_model(args.model)
    _apply_thresholds(head, est, args)
    manifest = DatasetManifest.load(args.manifest)
    idx = [i for i, r in enumerate(manifest.records) if r["split"] == args.split]
    images = [manifest.sample(i).raster for i in idx]
    names = [manifest.records[i]["image"] for i in idx]
    lines = []
    if head == "detector":
        for name, dets in zip(names, est.detect(images)):
            lines.append({"image": name, "detections": [d.to_json() for d in dets]})
    else:
        preds = _predict(head, est, images)
        for name, p in zip(names, preds):
            lines.append({"image": name, "label": p.label, "probability": p.probability, "rejected": p.rejected})
        if head == "sequencer" and args.frames_dir:
            fd = Path(args.frames_dir)
            fd.mkdir(parents=True, exist_ok=True)
            for name, frames in zip(names, est.predict_frames(images)):
                write_frame_dump(frames, fd / (Path(name).stem + ".csv"))
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for rec in lines:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"wrote {len(lines)} predictions to {out}")
    return EXIT_OK


def cmd_resize(args):
    try:
        sw = float(args.width)
    except ValueError:
        raise UsageError(f"resize: width must be numeric, got {args.width!r}") from None
    if not np.isfinite(sw) or sw <= 0:
        raise UsageError("resize: width must be positive")
    width = input_width_rule(int(sw) if sw.is_integer() else sw, ResizePolicy())
    print(width)
    for _, table_sw, table_w in PUBLISHED_WIDTHS:
        if table_sw == sw and table_w != width:
            print(f"note: the published width table lists {table_w} for this string width; "
                  f"the rule gives {width}")
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest
    ok = run_selftest(seed=args.seed, out=sys.stdout)
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {"synth": cmd_synth, "anchors": cmd_anchors, "train": cmd_train, "eval": cmd_eval,
            "decode": cmd_decode, "resize": cmd_resize, "selftest": cmd_selftest}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"hdsr: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"hdsr: numerical failure: {exc}", file=sys.stderr)
        for rec in exc.history:
            print(f"  epoch {rec.epoch}: train {rec.train_loss:.5f} val {rec.val_loss:.5f}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError, CorpusIncompleteError, SplitPolicyError) as exc:
        print(f"hdsr: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
