import json

import numpy as np
import pytest

from relframes import __version__
from relframes.api.commands import run_command, strong_way_summary
from relframes.api.reporting import (
    named_scalars,
    report_from_json,
    report_to_csv,
    report_to_json,
)
from relframes.api.schemas import Report, RunConfig
from relframes.core.errors import ConfigError
from relframes.main import main, parse_config
from relframes.services.measure import StrongWayReport


def run_cli(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


def test_model1_report(capsys):
    """Test a passing run and its JSON report"""
    code, out = run_cli(capsys, "model1", "--theta", "0.7")
    assert code == 0
    report = json.loads(out)
    assert report["command"] == "model1"
    assert report["version"] == __version__
    assert report["passed"] is True
    assert abs(report["results"]["p0"] - np.cos(0.35) ** 2) < 1e-12
    assert report["provenance"]["theta"] == "flag"
    assert report["provenance"]["j"] == "default"
    assert "wall_clock" not in report


def test_reports_are_deterministic(capsys):
    """Test that identical invocations give identical bytes"""
    _, first = run_cli(capsys, "bounds", "--seed", "5", "--trials", "2")
    _, second = run_cli(capsys, "bounds", "--seed", "5", "--trials", "2")
    assert first == second
    assert list(json.loads(first)) == sorted(json.loads(first))


def test_sweep_without_seed_is_a_config_error(capsys):
    """Test that randomized sweeps require a seed"""
    code, out = run_cli(capsys, "bounds")
    assert code == 2
    assert out == ""
    with pytest.raises(ConfigError):
        parse_config(["coherence"])


def test_unknown_command_and_bad_values(capsys):
    """Test that parse failures exit with code 2"""
    assert run_cli(capsys, "teleport")[0] == 2
    assert run_cli(capsys, "model2", "--j", "0")[0] == 2
    assert run_cli(capsys, "qubit", "--epsilon", "1.5")[0] == 2


def test_config_file_precedence(tmp_path):
    """Test defaults < file < flags and the recorded provenance"""
    path = tmp_path / "run.toml"
    path.write_text("theta = 0.5\nj = 3\n")
    cfg, provenance, _ = parse_config(["model2", "--config", str(path), "--j", "2"])
    assert cfg.theta == 0.5
    assert cfg.j == 2
    assert provenance["theta"] == "file"
    assert provenance["j"] == "flag"
    assert provenance["theta_prime"] == "default"


def test_json_config_file_with_unknown_key(tmp_path):
    """Test that unknown configuration keys are rejected"""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"theta": 0.5, "colour": "blue"}))
    with pytest.raises(ConfigError):
        parse_config(["model1", "--config", str(path)])
    with pytest.raises(ConfigError):
        parse_config(["model1", "--config", str(tmp_path / "missing.json")])


def test_truncation_error_emits_partial_report(capsys):
    """Test that a short cutoff fails with code 2 and a partial report"""
    code, out = run_cli(capsys, "as", "--cutoff", "10")
    assert code == 2
    report = json.loads(out)
    assert report["passed"] is False
    assert "required cutoff" in report["error"]


def test_csv_report_to_file(tmp_path, capsys):
    """Test CSV output written to an absolute path"""
    target = tmp_path / "model3.csv"
    code, out = run_cli(capsys, "model3", "--format", "csv", "--output", str(target))
    assert code == 0
    assert out == ""
    lines = target.read_text().splitlines()
    assert lines[0] == "name,value"
    assert "passed,True" in lines


def test_report_round_trip():
    """Test that a parsed report equals the emitted one apart from wall clock"""
    report = run_command(RunConfig(command="model1", theta=0.3))
    parsed = report_from_json(report_to_json(report))
    assert parsed.wall_clock == 0.0
    assert parsed.model_dump(exclude={"wall_clock"}) == report.model_dump(exclude={"wall_clock"})


def test_csv_has_one_row_per_scalar():
    """Test the CSV rows against the named scalars"""
    report = run_command(RunConfig(command="model2", j=2))
    rows = report_to_csv(report).splitlines()
    assert len(rows) - 1 == len(list(named_scalars(report)))


def test_report_requires_tolerance_for_every_residual():
    """Test that residuals without tolerances are rejected"""
    with pytest.raises(ValueError):
        Report(command="model1", version=__version__, residuals={"p0": 0.0})


@pytest.mark.parametrize(
    "params",
    [
        {"command": "model1", "theta": 1.0},
        {"command": "model2", "j": 3, "theta": 0.4, "theta_prime": 0.2},
        {"command": "model3", "cutoff": 5, "n": 2},
        {"command": "qubit", "n": 20},
        {"command": "as", "q1": 9.0, "q2": 9.0},
        {"command": "dowling", "m": 16.0, "phi": 0.8},
        {"command": "appendix", "m": 100.0, "k": 2},
        {"command": "pom-validate", "n": 4, "bins": 12},
        {"command": "way"},
        {"command": "smear", "k": 2, "j": 3},
        {"command": "bounds", "which": "owb", "trials": 2, "seed": 1},
        {"command": "as-nogo", "trials": 2, "seed": 1},
        {"command": "coherence", "trials": 3, "seed": 1},
        {"command": "strong-way", "trials": 2, "seed": 1},
    ],
)
def test_every_command_passes(params):
    """Test that each command's checks pass on representative parameters"""
    report = run_command(RunConfig(**params))
    assert report.passed, report.residuals
    assert set(report.residuals) == set(report.tolerances)


def test_strong_way_fails_on_skipped_trials():
    """Test that a trial without the conservation hypothesis is counted and fails the sweep"""
    measured = StrongWayReport(hypothesis=0.0, residual=1e-13, skipped=False, tolerance=1e-9)
    skipped = StrongWayReport(hypothesis=1.0, skipped=True, tolerance=1e-9)
    out = strong_way_summary([measured, skipped, measured])
    assert out.results == {"trials": 3, "skipped": 1, "max_residual": 1e-13}
    assert out.residuals["skipped"] > out.tolerances["skipped"]
    assert out.residuals["invariance"] <= out.tolerances["invariance"]
    clean = strong_way_summary([measured])
    assert clean.residuals["skipped"] == 0.0


def test_json_floats_keep_full_precision():
    """Test that every report float parses back exactly and needs at most 17 digits"""
    report = run_command(RunConfig(command="qubit", n=9))
    text = report_to_json(report)

    def floats(node):
        if isinstance(node, dict):
            for value in node.values():
                yield from floats(value)
        elif isinstance(node, list):
            for value in node:
                yield from floats(value)
        elif isinstance(node, float):
            yield node

    values = list(floats(json.loads(text)))
    assert values
    for value in values:
        assert value == float(format(value, ".17g"))
        digits = repr(value).lower().split("e")[0].replace("-", "").replace(".", "").strip("0")
        assert len(digits) <= 17
        assert repr(value) in text
