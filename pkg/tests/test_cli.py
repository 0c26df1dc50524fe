import json
import subprocess
import sys

import pytest

from flowstab.cli import EXIT_DIVERGING, EXIT_ERROR, EXIT_NOT_CERTIFIED, EXIT_OK, OUT_ENV, run
from flowstab.scenario_io import bundled_path, read_trajectory


@pytest.fixture
def out(tmp_path):
    return tmp_path / "out"


def test_list_scenarios(capsys):
    assert run(["list-scenarios"]) == EXIT_OK
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == ["example1", "junction", "local-node", "multicommodity", "timevarying"]


def test_validate(capsys):
    assert run(["validate", "--scenario", "example1"]) == EXIT_OK
    assert "routing: valid" in capsys.readouterr().out
    assert run(["validate", "--scenario", "junction"]) == EXIT_OK
    assert run(["validate", "--scenario", "junction", "--mode", "smooth"]) == EXIT_ERROR


def test_validate_accepts_a_path():
    assert run(["validate", "--scenario", str(bundled_path("multicommodity"))]) == EXIT_OK


@pytest.mark.parametrize("argv, code", [
    (["certify", "--scenario", "example1"], EXIT_OK),
    (["certify", "--scenario", "multicommodity"], EXIT_OK),
    (["certify", "--scenario", "junction"], EXIT_NOT_CERTIFIED),
    (["certify", "--scenario", "junction", "--param", "lambda1=0.5"], EXIT_OK),
    (["certify", "--scenario", "local-node"], EXIT_NOT_CERTIFIED),
])
def test_certify_exit_codes(argv, code, out):
    assert run(argv + ["--out", str(out)]) == code


def test_certify_writes_report(out, capsys):
    run(["certify", "--scenario", "example1", "--out", str(out), "--format", "structured"])
    printed = capsys.readouterr().out
    assert (out / "example1.certificate.json").read_text() == printed
    payload = json.loads(printed)
    assert payload["overall"] == "certified-ISS" and "generated_at" in payload


def test_structured_output_is_byte_identical_without_timestamp(out, capsys):
    argv = ["certify", "--scenario", "timevarying", "--format", "structured", "--no-timestamp", "--out", str(out)]
    run(argv)
    first = capsys.readouterr().out
    run(argv)
    assert capsys.readouterr().out == first and "generated_at" not in first


def test_simulate(out):
    assert run(["simulate", "--scenario", "example1", "--horizon", "10", "--out", str(out)]) == EXIT_OK
    table = read_trajectory(out / "example1.trajectory.csv")
    assert table.t[-1] == pytest.approx(10.0)
    assert "verdict:" in (out / "example1.monitors.txt").read_text()


def test_simulate_diverging_junction(out):
    assert run(["simulate", "--scenario", "junction", "--out", str(out)]) == EXIT_DIVERGING


def test_reproduce_single_variant(out, capsys):
    code = run(["reproduce", "timevarying", "--param", "A=0.51", "--param", "phi=0", "--out", str(out)])
    assert code == EXIT_DIVERGING
    text = capsys.readouterr().out
    assert "2 of 2 expectations matched" in text
    assert (out / "timevarying" / "A=0.51_phi=0" / "trajectory.csv").exists()


def test_param_values_accept_pi(out, capsys):
    run(["certify", "--scenario", "timevarying", "--param", "phi=pi", "--param", "A=0.1",
         "--format", "structured", "--no-timestamp", "--out", str(out)])
    assert json.loads(capsys.readouterr().out)["certificates"][0]["lhs"] == pytest.approx(0.4)


@pytest.mark.parametrize("argv", [
    ["certify", "--scenario", "example1", "--param", "A=1"],
    ["certify", "--scenario", "example1", "--param", "lambda1"],
    ["certify", "--scenario", "example1", "--param", "lambda1=abc"],
    ["certify", "--scenario", "no-such-file.json"],
    ["certify", "--scenario", "example1", "--bogus"],
    ["simulate", "--scenario", "example1", "--dt", "-1"],
    ["frobnicate"],
    [],
])
def test_errors_exit_one(argv, out, capsys):
    assert run(argv + ["--out", str(out)] if argv and argv[0] != "frobnicate" else argv) == EXIT_ERROR


def test_malformed_file_reports_location(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": \n')
    assert run(["validate", "--scenario", str(bad)]) == EXIT_ERROR
    assert "line 2" in capsys.readouterr().err


def test_out_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    assert run(["certify", "--scenario", "example1"]) == EXIT_OK
    assert (tmp_path / "env" / "example1.certificate.txt").exists()


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "flowstab.cli", "certify", "--scenario", "junction",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == EXIT_NOT_CERTIFIED
    assert "overall: not-certified" in proc.stdout
