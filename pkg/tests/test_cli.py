import json

import pytest

from partsim.cli import EXIT_CONFIG, EXIT_OK, EXIT_PROPERTIES, main

GOOD_YAML = """\
name: tiny
n: 8
rounds: 120
tx_every: 4
splits:
  - round: 40
    peers_a: [0, 1, 2, 3]
    peers_b: [4, 5, 6, 7]
    fraction_a: 1/2
detector:
  kind: EAGE
  windows:
    - {from: 40, to: 60, forced: 0}
"""


def run_cli(*argv):
    return main(list(argv))


def test_run_preset_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "o"
    code = run_cli("run", "--preset", "baseline", "--n", "8",
                   "--rounds", "80", "--out", str(out))
    assert code == EXIT_OK
    csv = (out / "baseline.csv").read_text().splitlines()
    assert len(csv) == 81
    assert csv[0].startswith("scenario,runs,round,")
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["scenarios"][0]["scenario"] == "baseline"
    assert manifest["scenarios"][0]["runs"] == 1
    assert manifest["columns"][0] == "scenario"


def test_output_is_byte_identical_across_invocations(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run_cli("run", "--preset", "baseline", "--n", "8",
                       "--rounds", "80", "--runs", "2",
                       "--out", str(out)) == EXIT_OK
    assert (a / "baseline.csv").read_bytes() == (b / "baseline.csv").read_bytes()
    assert (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()


def test_run_yaml_config(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(GOOD_YAML)
    out = tmp_path / "o"
    code = run_cli("run", "--config", str(cfg), "--out", str(out))
    assert code == EXIT_OK
    assert (out / "tiny.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    entry = manifest["scenarios"][0]
    assert entry["detector"] == "EAGE"
    assert {"round": 40, "label": "split"} in entry["events"]


def test_malformed_yaml_exits_config(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("n: [unclosed\n")
    assert run_cli("run", "--config", str(bad)) == EXIT_CONFIG
    bad.write_text("bogus_field: 3\n")
    assert run_cli("run", "--config", str(bad)) == EXIT_CONFIG
    bad.write_text("n: 1\n")
    assert run_cli("run", "--config", str(bad)) == EXIT_CONFIG
    assert run_cli("run", "--config", str(tmp_path / "nope.yaml")) \
        == EXIT_CONFIG


def test_n_flag_rejected_with_config(tmp_path):
    cfg = tmp_path / "tiny.yaml"
    cfg.write_text(GOOD_YAML)
    assert run_cli("run", "--config", str(cfg), "--n", "16") == EXIT_CONFIG


def test_sweep_writes_one_csv_per_preset(tmp_path):
    out = tmp_path / "o"
    code = run_cli("sweep", "--presets", "baseline,lying-age", "--n", "8",
                   "--rounds", "60", "--out", str(out))
    assert code == EXIT_OK
    assert (out / "baseline.csv").exists()
    assert (out / "lying-age.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert [e["scenario"] for e in manifest["scenarios"]] \
        == ["baseline", "lying-age"]


def test_unknown_preset_in_sweep_exits_config(tmp_path):
    assert run_cli("sweep", "--presets", "nope",
                   "--out", str(tmp_path)) == EXIT_CONFIG


def test_trace_file_written(tmp_path):
    out = tmp_path / "o"
    code = run_cli("run", "--preset", "lagging-age", "--n", "8",
                   "--rounds", "120", "--trace", "--out", str(out))
    assert code == EXIT_OK
    trace = (out / "lagging-age.trace.txt").read_text()
    assert "event split" in trace


def test_check_properties_clean_preset(tmp_path):
    code = run_cli("run", "--preset", "baseline", "--n", "8",
                   "--rounds", "80", "--check-properties",
                   "--out", str(tmp_path))
    assert code == EXIT_OK
