import json
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from strain_sense.cli import run
from strain_sense.reports import emit_reports
from strain_sense.training import TrainReport

SMALL_TRAIN = ["--epochs", "3", "--growth-rate", "2", "--batch-size", "16"]
SMALL_EMBED = ["--perplexity", "5", "--iterations", "60", "--exaggeration-iters", "20"]


@pytest.fixture(scope="module")
def schema():
    text = resources.files("strain_sense.schemas").joinpath("summary.schema.json").read_text()
    return json.loads(text)


def call(capsys, schema, *argv):
    code = run(list(argv) + ["--json"])
    out = capsys.readouterr().out
    doc = json.loads(out)
    jsonschema.validate(doc, schema)
    assert code == 0 and doc["status"] == "ok"
    return doc


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["gen", "--duration", "90", "-o", str(d / "data.csv")]) == 0
    assert run(["featurize", str(d / "data.csv"), "-o", str(d / "specs.jsonl")]) == 0
    assert run(["train", str(d / "specs.jsonl"), *SMALL_TRAIN, "--report-dir", str(d / "rep"),
                "-o", str(d / "model.json")]) == 0
    return d


def test_pipeline_outputs(pipeline):
    d = pipeline
    assert (d / "specs.norm.json").exists()
    model = json.loads((d / "model.json").read_text())
    assert model["version"] == 1 and len(model["label_map"]) == 4
    conf = (d / "rep" / "confusion.csv").read_text().splitlines()
    assert len(conf) == 5 and conf[0].split(",")[1:] == model["label_map"]
    assert all(len(line.split(",")) == 5 for line in conf)
    assert len((d / "rep" / "cost_curve.csv").read_text().splitlines()) == 4


def test_json_summaries_match_schema(pipeline, tmp_path, capsys, schema):
    d = pipeline
    doc = call(capsys, schema, "gen", "--profiles", "impact3", "--duration", "12", "-o", str(tmp_path / "i.csv"))
    assert doc["classes"] == ["Hand", "Hammer", "Spanner"] and doc["samples_per_class"] == 120
    doc = call(capsys, schema, "featurize", str(d / "data.csv"), "-o", str(tmp_path / "s.jsonl"))
    assert doc["spectrograms"] == 60
    doc = call(capsys, schema, "eval", str(d / "specs.jsonl"), "--model", str(d / "model.json"))
    assert doc["total"] == 9 and sum(map(sum, doc["confusion"])) == 9
    doc = call(capsys, schema, "embed", str(d / "specs.jsonl"), "--model", str(d / "model.json"),
               *SMALL_EMBED, "-o", str(tmp_path / "emb"))
    assert doc["points"] == 60
    rows = (tmp_path / "emb" / "embedding.csv").read_text().splitlines()
    assert rows[0] == "x,y,z,label" and len(rows) == 61
    assert (tmp_path / "emb" / "embedding.svg").read_text().startswith("<svg")
    doc = call(capsys, schema, "sweep", str(d / "specs.jsonl"), "--grid", "gd:0.0002,adam:0.02",
               *SMALL_TRAIN, "-o", str(tmp_path / "sweep.csv"))
    assert len(doc["rows"]) == 2 and sum(r["optimal"] for r in doc["rows"]) == 1
    assert len((tmp_path / "sweep.csv").read_text().splitlines()) == 3


def test_import_and_watch(pipeline, tmp_path, capsys, schema):
    wide = tmp_path / "wide.csv"
    rows = [f"{(i + 1) / 10:.1f},{360 + (i % 7) * 0.1:.2f},{355 + (i % 5) * 0.2:.2f}" for i in range(130)]
    wide.write_text("Time (sec),Hand,Hammer\n" + "\n".join(rows) + "\n")
    doc = call(capsys, schema, "import", str(wide), "-o", str(tmp_path / "c.csv"))
    assert doc["sample_rate_hz"] == 10.0 and doc["samples_per_class"] == 130

    live = tmp_path / "live.csv"
    live.write_text("time_s,amplitude\n" + "".join(f"{(i + 1) / 10!r},{360.0 + i % 3}\n" for i in range(130)))
    events = tmp_path / "events.jsonl"
    doc = call(capsys, schema, "watch", str(live), "--model", str(pipeline / "model.json"), "--replay",
               "-o", str(events))
    assert doc["events"] == 2 and doc["buffered"] == 10
    lines = [json.loads(x) for x in events.read_text().splitlines()]
    assert [x["window_index"] for x in lines] == [0, 1]


def test_rerun_is_byte_identical(pipeline, tmp_path):
    d = pipeline
    assert run(["train", str(d / "specs.jsonl"), *SMALL_TRAIN, "--report-dir", str(tmp_path / "rep"),
                "-o", str(tmp_path / "model.json")]) == 0
    assert (tmp_path / "model.json").read_bytes() == (d / "model.json").read_bytes()
    for name in ("report.json", "cost_curve.csv", "confusion.csv"):
        assert (tmp_path / "rep" / name).read_bytes() == (d / "rep" / name).read_bytes()


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("STRAIN_SENSE_SEED", "7")
    run(["gen", "--duration", "12", "-o", str(tmp_path / "a.csv")])
    monkeypatch.setenv("STRAIN_SENSE_SEED", "8")
    run(["gen", "--duration", "12", "-o", str(tmp_path / "b.csv")])
    run(["gen", "--duration", "12", "--seed", "7", "-o", str(tmp_path / "c.csv")])
    monkeypatch.delenv("STRAIN_SENSE_SEED")
    run(["gen", "--duration", "12", "-o", str(tmp_path / "d.csv")])
    a, b, c, d = [(tmp_path / f"{n}.csv").read_bytes() for n in "abcd"]
    assert a != b and a == c == d


def test_missing_input_exits_1(tmp_path, capsys):
    assert run(["train", str(tmp_path / "nope.jsonl"), "-o", str(tmp_path / "m.json")]) == 1
    err = capsys.readouterr().err
    assert "strain-sense train: error:" in err and "nope.jsonl" in err
    assert len(err.strip().splitlines()) == 1


def test_domain_error_exits_1(tmp_path, capsys):
    assert run(["gen", "--duration", "3", "-o", str(tmp_path / "x.csv")]) == 1
    assert "gen: error" in capsys.readouterr().err
    assert not (tmp_path / "x.csv").exists()


def test_usage_errors_exit_2(capsys):
    for argv in (["bogus"], ["train"], ["gen", "--no-such-flag", "-o", "x"]):
        with pytest.raises(SystemExit) as exc:
            run(argv)
        assert exc.value.code == 2
    capsys.readouterr()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "strain_sense", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "featurize" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "strain_sense", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2


def test_emit_reports_idempotent(quick_model, tmp_path):
    _, report, _, _ = quick_model
    first = [p.read_bytes() for p in emit_reports(report, tmp_path)]
    second = [p.read_bytes() for p in emit_reports(report, tmp_path)]
    assert first == second and len(first) == 3
    with pytest.raises(TypeError):
        emit_reports(object(), tmp_path)
    assert isinstance(report, TrainReport)
