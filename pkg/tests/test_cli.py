import json

import pytest

from app import main
from ml.simulator import state_intervals
from ml.trace import format_timestamp, read_trace


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_help_exits_cleanly(capsys):
    code, out, _ = _run(capsys, "--help")
    assert code == 0
    assert "simulate" in out and "gradcheck" in out


def test_unknown_subcommand_is_a_usage_error(capsys):
    code, _, err = _run(capsys, "teleport")
    assert code == 2
    assert "invalid choice" in err


def test_gradcheck_passes(capsys):
    code, out, _ = _run(capsys, "gradcheck", "--seed", "3")
    assert code == 0
    result = json.loads(out)
    assert result["passed"] is True
    assert result["n_checked"] == 200


def test_simulate_is_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert _run(capsys, "simulate", "--days", "1", "--seed", "5", "-o", str(a))[0] == 0
    assert _run(capsys, "simulate", "--days", "1", "--seed", "5", "-o", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes().startswith(b'{"rec":"meta"')


def test_simulated_and_attacked_traces_record_their_seed(tmp_path, capsys):
    trace = tmp_path / "home.jsonl"
    attacked = tmp_path / "attacked.jsonl"
    scenario = tmp_path / "scenario.json"
    assert _run(capsys, "simulate", "--days", "2", "--seed", "5", "-o", str(trace))[0] == 0
    assert json.loads(trace.read_text().splitlines()[0])["seed"] == 5

    home = read_trace(trace)
    lo, hi = state_intervals(home, "sensor.sleep_state", "asleep")[0]
    scenario.write_text(json.dumps({
        "kind": "lights_on_during_night",
        "start": format_timestamp(lo),
        "end": format_timestamp(hi),
    }))
    code, _, _ = _run(capsys, "attack", "--in", str(trace), "--scenario", str(scenario), "--seed", "11", "-o", str(attacked))
    assert code == 0
    assert json.loads(attacked.read_text().splitlines()[0])["seed"] == 11
    assert read_trace(attacked).seed == 11


def test_import_writes_canonical_trace(tmp_path, capsys):
    export = tmp_path / "history.csv"
    out = tmp_path / "home.jsonl"
    export.write_text(
        "entity_id,state,last_changed\n"
        "sensor.temp,21.5,2024-01-01T08:00:00+00:00\n"
        "light.desk,on,2024-01-01T08:00:05+00:00\n"
    )
    code, _, _ = _run(capsys, "import", "--in", str(export), "--tz", "Europe/Berlin", "-o", str(out))
    assert code == 0
    lines = [json.loads(line) for line in out.read_text().splitlines()]
    assert lines[0]["tz"] == "Europe/Berlin"
    assert sum(1 for rec in lines if rec["rec"] == "update") == 2


def test_domain_error_exits_with_one(tmp_path, capsys):
    trace = tmp_path / "home.jsonl"
    scenario = tmp_path / "scenario.json"
    _run(capsys, "simulate", "--days", "1", "-o", str(trace))
    scenario.write_text(json.dumps({
        "kind": "light_flickering",
        "start": "2030-01-01T00:00:00.000Z",
        "end": "2030-01-01T01:00:00.000Z",
    }))
    code, _, err = _run(capsys, "attack", "--in", str(trace), "--scenario", str(scenario))
    assert code == 1
    assert err.strip().splitlines()[-1].startswith("error kind=TraceSpanError message=")


def test_malformed_trace_reports_kind(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"rec":"meta","tz":"UTC","version":1}\n{oops\n')
    model = tmp_path / "model.zip"
    code, _, err = _run(capsys, "train", "--in", str(bad), "-o", str(model))
    assert code == 1
    assert "error kind=TraceFormatError" in err
    assert not model.exists()


def test_missing_file_is_reported(tmp_path, capsys):
    code, _, err = _run(capsys, "evaluate", "--model", str(tmp_path / "none.zip"), "--in", str(tmp_path / "none.jsonl"))
    assert code == 1
    assert "error kind=FileNotFoundError" in err


def test_train_detect_evaluate_round(tmp_path, capsys):
    trace = tmp_path / "home.jsonl"
    config = tmp_path / "experiment.json"
    model = tmp_path / "model.zip"
    verdicts = tmp_path / "verdicts.jsonl"
    state = tmp_path / "state.json"
    report = tmp_path / "report.json"
    config.write_text(json.dumps({
        "l": 4,
        "context_depth": 2,
        "train": {"hidden": [4, 2], "max_epochs": 2, "lr_milestones": [], "dropout": 0.0},
    }))

    assert _run(capsys, "simulate", "--days", "2", "--seed", "1", "-o", str(trace))[0] == 0
    assert _run(capsys, "train", "--in", str(trace), "--config", str(config), "-o", str(model))[0] == 0
    assert _run(
        capsys, "detect", "--model", str(model), "--in", str(trace), "-o", str(verdicts), "--state-out", str(state)
    )[0] == 0
    assert _run(capsys, "evaluate", "--model", str(model), "--in", str(trace), "-o", str(report))[0] == 0

    lines = verdicts.read_text().splitlines()
    n_events = sum(1 for line in trace.read_text().splitlines() if '"rec":"update"' in line)
    assert len(lines) == n_events
    first = json.loads(lines[0])
    assert set(first) >= {"i", "t", "device", "score", "threshold", "decision", "provisional"}
    assert json.loads(state.read_text())["index"] == n_events

    doc = json.loads(report.read_text())
    assert doc["counts"]["tp"] + doc["counts"]["fn"] == 0
    assert sum(doc["counts"].values()) == n_events
    assert doc["recall"] == "NA"


@pytest.mark.slow
def test_benchmark_command_writes_reports(tmp_path, capsys):
    code, out, _ = _run(capsys, "benchmark", "--desk-scale", "--seed", "7", "--out-dir", str(tmp_path))
    assert code == 0
    assert (tmp_path / "benchmark-seed7.json").exists()
    assert (tmp_path / "benchmark-seed7.csv").exists()
