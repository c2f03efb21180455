from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from src.domain.models import ConfigError, InvalidArgumentError, OuParams, Scheme, SimGrid, TheoremId, TheoremReport
from src.domain.schemas import ExperimentConfig
from src.ou.process import simulate_path
from src.services.config_io import build_config, env_overrides, load_config_file, parse_assignment, read_path_csv
from src.services.reports import read_reports_csv, write_path_csv, write_reports_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path: Path, name: str, text: str) -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_flat_config_file_is_parsed(tmp_path: Path) -> None:
    path = _write(
        tmp_path,
        "run.conf",
        "# acceptance run\ntheta = -2\nt-max = 1e3\nt_min=10  # inline comment\ntheorems = T1,L2\n",
    )
    assert load_config_file(path)["t-min"] == 10
    config = build_config(path, environ={})
    assert config.theta == -2.0
    assert config.t_max == 1000.0
    assert config.t_min == 10.0
    assert config.theorems == (TheoremId.T1, TheoremId.L2)


def test_yaml_config_is_accepted(tmp_path: Path) -> None:
    path = _write(tmp_path, "run.yaml", "alpha: 0.9\nreplicas: 4\nscheme: euler\n")
    config = build_config(path, environ={})
    assert config.alpha == 0.9
    assert config.replicas == 4
    assert config.scheme is Scheme.EULER


def test_nested_yaml_is_rejected(tmp_path: Path) -> None:
    path = _write(tmp_path, "run.yaml", "grid:\n  dt: 0.1\n")
    with pytest.raises(ConfigError):
        load_config_file(path)


def test_overrides_take_precedence_over_env_and_file(tmp_path: Path) -> None:
    path = _write(tmp_path, "run.conf", "alpha = 0.6\nreplicas = 2\nseed-root = 1\n")
    environ = {"OUDRIFT_SET_ALPHA": "0.7", "OUDRIFT_SET_SEED_ROOT": "5", "UNRELATED": "x"}
    assert env_overrides(environ) == {"alpha": 0.7, "seed-root": 5}
    config = build_config(path, ["alpha=0.9"], environ=environ)
    assert config.alpha == 0.9
    assert config.seed_root == 5
    assert config.replicas == 2
    assert build_config(path, ["alpha=0.9"], environ=environ, seed_root=8).seed_root == 8


def test_unknown_key_is_a_config_error() -> None:
    with pytest.raises(ConfigError, match="colour"):
        build_config(None, ["colour=blue"], environ={})
    with pytest.raises(ConfigError):
        parse_assignment("no-equals-sign")


def test_incompatible_theorem_parameters_are_rejected() -> None:
    with pytest.raises(ConfigError, match="5/6"):
        build_config(None, ["theorems=T5", "alpha=0.8", "replicas=4"], environ={})
    with pytest.raises(ConfigError, match="replicas"):
        build_config(None, ["theorems=T2"], environ={})
    with pytest.raises(ConfigError):
        build_config(None, ["theorems=T4", "alpha-prime=0.85"], environ={})
    with pytest.raises(ConfigError):
        build_config(None, ["theorems=T1", "theta=0.5"], environ={})
    build_config(None, ["theorems=T5", "alpha=0.85", "alpha-prime=0.52", "replicas=4"], environ={})


def test_simulation_only_config_allows_zero_noise() -> None:
    config = build_config(None, ["sigma=0"], environ={})
    assert config.params() == OuParams(-1.0, 0.0)


def test_canonical_form_and_hash_are_stable() -> None:
    config = ExperimentConfig(theorems="L2,T1", t_max=100.0, t_min=10.0)
    canonical = config.canonical()
    assert "t-max" in canonical and "seed-root" in canonical
    assert canonical["theorems"] == ["T1", "L2"]
    assert config.config_hash() == ExperimentConfig(theorems="T1,L2", t_max=100.0, t_min=10.0).config_hash()
    assert config.config_hash() != ExperimentConfig(theorems="T1,L2", t_max=100.0, t_min=20.0).config_hash()


def test_path_csv_keeps_values_and_increments(tmp_path: Path) -> None:
    path = simulate_path(OuParams(-1.0, 1.0), SimGrid(2.0, 0.1), seed=3, scheme=Scheme.EULER)
    target = write_path_csv(path, tmp_path / "path.csv")
    assert target.read_text(encoding="utf-8").splitlines()[0] == "t,x,db"
    loaded = read_path_csv(target)
    assert loaded.scheme is Scheme.OBSERVED
    assert loaded.n_steps == path.n_steps
    assert loaded.dt == pytest.approx(0.1)
    np.testing.assert_array_equal(loaded.values, path.values)
    np.testing.assert_array_equal(loaded.brownian_increments, path.brownian_increments)


def test_irregular_path_is_rejected(tmp_path: Path) -> None:
    target = _write(tmp_path, "path.csv", "t,x\n0,0\n0.1,0.2\n0.3,0.1\n")
    with pytest.raises(InvalidArgumentError, match="regular"):
        read_path_csv(target)
    missing = _write(tmp_path, "bad.csv", "time,value\n0,0\n1,1\n")
    with pytest.raises(InvalidArgumentError):
        read_path_csv(missing)


def test_reports_table_reads_back_pass_flags(tmp_path: Path) -> None:
    reports = [
        TheoremReport.judge(TheoremId.L2, "r2_abs", 1e-12, 0.0, 1e-10, "upper"),
        TheoremReport.judge(TheoremId.T1, "x", 3.0, 1.0, 0.5),
    ]
    context = {"T": 100.0, "dt": 0.01, "alpha": 0.8, "alpha_prime": 0.5, "replicas": 1, "seed_root": 0}
    target = write_reports_csv(reports, context, tmp_path / "reports.csv")
    rows = read_reports_csv(target)
    assert [row["pass"] for row in rows] == [True, False]
    assert rows[0]["value"] == 1e-12
    with pytest.raises(InvalidArgumentError):
        read_reports_csv(_write(tmp_path, "other.csv", "a,b\n1,2\n"))


@pytest.mark.parametrize("name", sorted(p.name for p in (CONFIGS / "acceptance").iterdir()))
def test_shipped_acceptance_configs_build(name: str) -> None:
    config = build_config(CONFIGS / "acceptance" / name, environ={})
    assert config.theorems
    assert config.burn_in <= config.t_min
