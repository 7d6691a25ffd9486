import csv
import json
import shutil
from importlib import resources
from pathlib import Path

import pytest

from glitchbench.cli import main
from glitchbench.results import read_results, write_results

FIXTURE = Path(str(resources.files("glitchbench") / "data" / "table_fixtures.jsonl"))


def _run(tmp_path, *args, name="r.jsonl"):
    out = tmp_path / name
    code = main(["run", *args, "--out", str(out)])
    return code, out


def _satisfied(record):
    want = record.extra["expected_labels"]
    return any(any(set(alt) <= set(got) for got in record.labels) for alt in want)


def test_run_maps_test_and_slow_clock(tmp_path, capsys):
    code, out = _run(tmp_path, "emfi_slow", "--test", "1", "--clock", "slow", "--n", "30", "--attempts", "64")
    assert code == 0
    records = read_results(out)
    assert len(records) == 64
    assert {(r.test_id.label, r.clock.label, r.clock.freq_hz) for r in records} == {("RegisterLoop", "slow", 16e6)}
    summary = json.loads((tmp_path / "r.jsonl.summary.json").read_text())
    assert summary["attempts"] == 64
    assert "success_rate=" in capsys.readouterr().out


@pytest.mark.parametrize("flag,label,freq", [("fast-vfi", "fast_vfi", 240e6), ("fast-em", "fast_emfi", 320e6), ("medium", "medium", 90e6)])
def test_clock_flag_mapping(tmp_path, flag, label, freq):
    code, out = _run(tmp_path, "vfi_slow", "--clock", flag, "--n", "30", "--attempts", "8")
    assert code == 0
    records = read_results(out)
    assert {(r.clock.label, r.clock.freq_hz) for r in records} == {(label, freq)}
    # the per-clock VFI length range follows the clock override
    assert all(r.glitch.length_ns <= {"fast_vfi": 800, "fast_emfi": 800, "medium": 2000}[label] for r in records)


def test_missing_config_names_the_path(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    assert main(["run", str(missing)]) != 0
    assert str(missing) in capsys.readouterr().err


def test_malformed_config_reports_field_and_line(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("attack: EMFI\ntest_id: 3\nn: 100\nclock: slow\nattempts: many\nseed: 1\n")
    assert main(["run", str(cfg)]) != 0
    err = capsys.readouterr().err
    assert f"{cfg}:5" in err and "attempts" in err


def test_broken_yaml_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("attack: EMFI\ntest_id: 3\nn: [1, 2\n")
    assert main(["run", str(cfg)]) != 0
    assert str(cfg) in capsys.readouterr().err


def test_unwritable_output_fails(tmp_path):
    out = tmp_path / "missing_dir" / "r.jsonl"
    assert main(["run", "emfi_slow", "--n", "20", "--attempts", "4", "--out", str(out)]) != 0


def test_identical_invocations_give_identical_bytes(tmp_path):
    args = ("emfi_fast", "--test", "1", "--n", "200", "--attempts", "128")
    _, a = _run(tmp_path, *args, name="a.jsonl")
    _, b = _run(tmp_path, *args, "--workers", "2", name="b.jsonl")
    assert a.read_bytes() == b.read_bytes()


def test_seed_environment_variable(tmp_path, monkeypatch):
    args = ("vfi_fast", "--n", "50", "--attempts", "16")
    _, default = _run(tmp_path, *args, name="d.jsonl")
    _, explicit = _run(tmp_path, *args, "--seed", "7", name="s.jsonl")
    monkeypatch.setenv("GLITCHBENCH_SEED", "7")
    _, env = _run(tmp_path, *args, name="e.jsonl")
    assert env.read_bytes() == explicit.read_bytes() != default.read_bytes()
    _, both = _run(tmp_path, *args, "--seed", "1", name="b.jsonl")
    assert both.read_bytes() == default.read_bytes()


def test_attribute_labels_every_fixture_row(tmp_path):
    path = tmp_path / "fixture.jsonl"
    shutil.copy(FIXTURE, path)
    assert main(["attribute", str(path)]) == 0
    records = read_results(path)
    assert len(records) == 39
    for r in records:
        assert r.labels
        if not r.extra["expected_unexplained"]:
            assert _satisfied(r), (r.index, r.extra["comment"], r.labels)
    first = path.read_bytes()
    assert main(["attribute", str(path)]) == 0
    assert path.read_bytes() == first


def test_attribute_without_successful_rows_is_a_no_op(tmp_path):
    _, out = _run(tmp_path, "emfi_slow", "--test", "1", "--n", "30", "--attempts", "64")
    records = read_results(out)
    assert not any(r.outcome.value == "Successful" for r in records)
    before = out.read_bytes()
    assert main(["attribute", str(out)]) == 0
    assert out.read_bytes() == before


def test_attribute_reports_malformed_line(tmp_path, capsys):
    path = tmp_path / "r.jsonl"
    good = FIXTURE.read_text().splitlines()[0]
    path.write_text(good + "\n" + "{not json\n")
    assert main(["attribute", str(path)]) != 0
    assert "line 2" in capsys.readouterr().err


def test_run_with_attribute_flag_labels_successes(tmp_path):
    code, out = _run(tmp_path, "vfi_fast", "--n", "300", "--attempts", "200", "--attribute")
    assert code == 0
    records = read_results(out)
    successes = [r for r in records if r.outcome.value == "Successful"]
    assert successes and all(r.labels for r in successes)


def test_report_emfi_map_and_scatter(tmp_path, capsys):
    k = 3
    _, out = _run(tmp_path, "emfi_fast", "--test", "1", "--n", "200", "--attempts", str(64 * k))
    capsys.readouterr()
    assert main(["report", str(out), "--out-dir", str(tmp_path / "rep")]) == 0
    text = capsys.readouterr().out
    records = read_results(out)
    successes = sum(r.outcome.value == "Successful" for r in records)
    assert f"success_rate: {successes / len(records):.4f}" in text
    with open(tmp_path / "rep" / "r_points.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 64
    counts = [int(r["expected_count"]) + int(r["crash_count"]) + int(r["success_count"]) for r in rows]
    assert counts == [k] * 64
    with open(tmp_path / "rep" / "r_emfi_scatter.csv") as fh:
        scatter = list(csv.DictReader(fh))
    assert len(scatter) == 64 * k
    for r in scatter:
        assert 0 <= float(r["plot_x_um"]) - float(r["x_um"]) <= 400
        assert 0 <= float(r["plot_y_um"]) - float(r["y_um"]) <= 400
        assert r["category"] in {"expected", "crash", "success"}


def test_report_vfi_scatter(tmp_path):
    _, out = _run(tmp_path, "vfi_medium", "--n", "50", "--attempts", "40")
    assert main(["report", str(out)]) == 0
    with open(tmp_path / "r_vfi_scatter.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 40
    assert set(rows[0]) == {"index", "voltage_v", "length_ns", "category"}
    assert not (tmp_path / "r_points.csv").exists()


def test_report_on_empty_file(tmp_path, capsys):
    path = tmp_path / "empty.jsonl"
    write_results(path, [])
    assert main(["report", str(path)]) == 0
    out = capsys.readouterr().out
    assert "attempts: 0" in out and "success_rate: 0.0000" in out


def test_report_svg(tmp_path):
    pytest.importorskip("matplotlib")
    _, out = _run(tmp_path, "emfi_fast", "--test", "1", "--n", "100", "--attempts", "64")
    assert main(["report", str(out), "--svg"]) == 0
    svg = tmp_path / "r_emfi.svg"
    first = svg.read_bytes()
    assert first.startswith(b"<?xml")
    assert main(["report", str(out), "--svg"]) == 0
    assert svg.read_bytes() == first


def test_selftest(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "BAD" not in out
    assert "spans 16.000000 cycles" in out


def test_oracle_small_case(capsys):
    assert main(["oracle", "--test", "3", "--n", "4"]) == 0
    assert "0 unexplained" in capsys.readouterr().out
