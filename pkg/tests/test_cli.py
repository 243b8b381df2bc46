import json

import pytest

from hdsr.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from hdsr.evalbench import parse_summary_line


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    code = main(["synth", "--out", str(out), "--count", "40", "--val-count", "10", "--test-count", "10",
                 "--lengths", "2-3", "--glyphs-per-class", "10", "--glyph-writers", "10", "--seed", "1"])
    assert code == EXIT_OK
    return out


def test_synth_writes_manifest_and_config(dataset):
    lines = (dataset / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 60
    cfg = json.loads((dataset / "run_config.json").read_text())
    assert cfg["count"] == 40 and cfg["lengths"] == [2, 3]


def test_synth_refuses_to_overwrite(dataset):
    assert main(["synth", "--out", str(dataset), "--count", "4"]) == EXIT_DATA


def test_resize(capsys):
    assert main(["resize", "150"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "256"
    assert main(["resize", "666"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "1120" and "1152" in out
    assert main(["resize", "abc"]) == EXIT_USAGE
    assert main(["resize", "-5"]) == EXIT_USAGE


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
    assert main(["train", "--out", str(tmp_path / "r")]) == EXIT_USAGE
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"count": 3, "nonsense": 1}))
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_USAGE
    assert "nonsense" in capsys.readouterr().err


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"count": 8, "lengths": "2-2", "glyphs_per_class": 5, "glyph_writers": 5}))
    out = tmp_path / "ds"
    assert main(["synth", "--config", str(cfg), "--out", str(out), "--count", "4"]) == EXIT_OK
    eff = json.loads((out / "run_config.json").read_text())
    assert eff["count"] == 4  # command line wins
    assert eff["lengths"] == [2, 2]


def test_missing_manifest_is_data_error(tmp_path):
    assert main(["anchors", "--manifest", str(tmp_path / "nope"), "--out", str(tmp_path / "a.json")]) == EXIT_DATA


def test_anchors(dataset, tmp_path, capsys):
    out = tmp_path / "anchors.json"
    assert main(["anchors", "--manifest", str(dataset), "--out", str(out), "--k", "3"]) == EXIT_OK
    assert len(json.loads(out.read_text())["anchors"]) == 3
    assert main(["anchors", "--manifest", str(dataset), "--out", str(out)]) == EXIT_DATA


@pytest.mark.parametrize("head", ["detector", "sequencer", "selector"])
def test_train_decode_eval(dataset, tmp_path, capsys, head):
    run = tmp_path / head
    assert main(["train", "--head", head, "--manifest", str(dataset), "--out", str(run),
                 "--max-epochs", "1", "--batch-size", "16"]) == EXIT_OK
    assert (run / "config.json").exists() and (run / "model" / "config.json").exists()
    # run directories are not silently reused
    assert main(["train", "--head", head, "--manifest", str(dataset), "--out", str(run),
                 "--max-epochs", "1"]) == EXIT_DATA

    preds = tmp_path / f"{head}.jsonl"
    assert main(["decode", "--model", str(run), "--manifest", str(dataset), "--out", str(preds)]) == EXIT_OK
    assert len(preds.read_text().splitlines()) == 10

    capsys.readouterr()
    assert main(["eval", "--model", str(run), "--manifest", str(dataset), "--out", str(tmp_path / "rep")]) == EXIT_OK
    direct = parse_summary_line(capsys.readouterr().out.strip().splitlines()[-1])
    assert main(["eval", "--predictions", str(preds), "--manifest", str(dataset)]) == EXIT_OK
    via_file = parse_summary_line(capsys.readouterr().out.strip().splitlines()[-1])
    assert direct["RECOG"] == via_file["RECOG"]
    assert (tmp_path / "rep" / "report.csv").read_text().startswith("length,samples,recognition,cls_err,det_err")


def test_unknown_head(dataset, tmp_path):
    assert main(["train", "--head", "oracle", "--manifest", str(dataset), "--out", str(tmp_path / "r")]) == EXIT_USAGE


def test_eval_needs_one_source(dataset):
    assert main(["eval", "--manifest", str(dataset)]) == EXIT_USAGE
