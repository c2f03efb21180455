from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from typer.testing import CliRunner

from src.services import montecarlo
from src.tools.cli import EXIT_FAILED, EXIT_RUNTIME, EXIT_USAGE, app

runner = CliRunner()

SMALL = ["--set", "t-max=2", "--set", "dt=0.1", "--set", "t-min=1"]


def _rows(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_simulate_without_noise_writes_zero_path(tmp_path: Path) -> None:
    result = runner.invoke(app, ["simulate", *SMALL, "--set", "sigma=0", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    rows = _rows(tmp_path / "path.csv")
    assert len(rows) == 21
    assert all(float(row["x"]) == 0.0 for row in rows)
    provenance = json.loads((tmp_path / "simulate.provenance.json").read_text(encoding="utf-8"))
    assert provenance["config_hash"]


def test_simulate_is_reproducible(tmp_path: Path) -> None:
    for name in ("a", "b"):
        result = runner.invoke(app, ["simulate", *SMALL, "--seed", "17", "--out", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    assert (tmp_path / "a" / "path.csv").read_bytes() == (tmp_path / "b" / "path.csv").read_bytes()
    header = (tmp_path / "a" / "path.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "t,x"


def test_simulate_euler_writes_brownian_increments(tmp_path: Path) -> None:
    result = runner.invoke(app, ["simulate", *SMALL, "--set", "scheme=euler", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    rows = _rows(tmp_path / "path.csv")
    assert list(rows[0]) == ["t", "x", "db"]
    assert rows[-1]["db"] == ""


def test_estimate_on_observed_exponential_path(tmp_path: Path) -> None:
    dt, n = 0.01, 2000
    values = np.cumprod(np.concatenate(([1.0], np.full(n, 1.0 - dt))))
    source = tmp_path / "observed.csv"
    with source.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x"])
        for i, x in enumerate(values):
            writer.writerow([repr(i * dt), repr(float(x))])
    out = tmp_path / "est"
    result = runner.invoke(app, ["estimate", "--path-csv", str(source), "--set", "t-min=2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    trace = _rows(out / "trace.csv")
    assert float(trace[0]["t"]) == pytest.approx(2.0)
    assert float(trace[-1]["t"]) == pytest.approx(20.0)
    for row in trace:
        assert float(row["theta_hat"]) == pytest.approx(-1.0, rel=1e-10)
        assert float(row["theta_tilde"]) == pytest.approx(-1.0, rel=1e-10)
    derived = json.loads((out / "derived.json").read_text(encoding="utf-8"))
    assert set(derived) == {"sigma_hat2", "theta_check", "sigma_tilde2", "theta_breve"}
    assert "theta_check" in result.output


def test_verify_lemmas_and_report(tmp_path: Path) -> None:
    result = runner.invoke(app, ["verify", "--set", "theorems=L2", "-j", "1", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "reports.csv").exists()
    assert len(_rows(tmp_path / "lemmas.csv")) == 3
    provenance = json.loads((tmp_path / "verify.provenance.json").read_text(encoding="utf-8"))
    assert provenance["seed_root"] == 0

    summary = runner.invoke(app, ["report", str(tmp_path)])
    assert summary.exit_code == 0, summary.output
    assert "L2: PASS" in summary.output


def test_verify_exit_code_on_failure(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(montecarlo, "LEMMA_TOLERANCE", 0.0)
    result = runner.invoke(app, ["verify", "--set", "theorems=L2", "--out", str(tmp_path)])
    assert result.exit_code == EXIT_FAILED
    summary = runner.invoke(app, ["report", str(tmp_path)])
    assert summary.exit_code == EXIT_FAILED
    assert "L2: FAIL" in summary.output


def test_verify_needs_theorems(tmp_path: Path) -> None:
    result = runner.invoke(app, ["verify", "--out", str(tmp_path)])
    assert result.exit_code == EXIT_USAGE


def test_unknown_config_key_is_a_usage_error(tmp_path: Path) -> None:
    result = runner.invoke(app, ["simulate", "--set", "colour=blue", "--out", str(tmp_path)])
    assert result.exit_code == EXIT_USAGE


def test_config_file_drives_the_run(tmp_path: Path) -> None:
    config = tmp_path / "run.conf"
    config.write_text("t-max = 2\ndt = 0.1\nt-min = 1\nscheme = coupled\n", encoding="utf-8")
    result = runner.invoke(app, ["simulate", "--config", str(config), "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    assert list(_rows(tmp_path / "path.csv")[0]) == ["t", "x", "db"]


def test_lemmas_prints_residual_table(tmp_path: Path) -> None:
    args = ["lemmas", "--set", "t-max=1000", "--set", "t-min=10", "--set", "points-per-decade=1"]
    result = runner.invoke(app, [*args, "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    lines = [line for line in result.output.splitlines() if line.startswith(("t,", "10", "1000"))]
    assert lines[0] == "t,alpha,r1,r2,r3,r4"
    assert len(_rows(tmp_path / "lemmas.csv")) == 3


def test_unexpected_error_is_a_runtime_failure(tmp_path: Path, monkeypatch: pytest.MonkeyPatch) -> None:
    def broken(*args: object, **kwargs: object) -> None:
        raise RuntimeError("worker pool died")

    monkeypatch.setattr("src.tools.cli.run_experiment", broken)
    result = runner.invoke(app, ["verify", *SMALL, "--set", "theorems=L1", "--out", str(tmp_path)])
    assert result.exit_code == EXIT_RUNTIME
    assert result.exit_code != EXIT_FAILED
