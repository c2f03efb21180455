from __future__ import annotations

import csv
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np
import yaml
from pydantic import ValidationError

from src.domain.models import ConfigError, InvalidArgumentError, SamplePath, Scheme, SimGrid
from src.domain.schemas import ExperimentConfig

logger = logging.getLogger(__name__)

ENV_PREFIX = "OUDRIFT_SET_"


def _coerce(raw: str) -> Any:
    text = raw.strip()
    if not text:
        return None
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        return text
    return value if isinstance(value, (int, float, str, bool)) else text


def _normalise_key(key: str) -> str:
    return key.strip().lower().replace("_", "-")


def parse_assignment(text: str) -> tuple[str, Any]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"expected key=value, got {text!r}")
    return _normalise_key(key), _coerce(value)


def load_config_file(path: Path) -> dict[str, Any]:
    """Read a flat key=value file or a flat YAML mapping (.yaml/.yml)."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() in {".yaml", ".yml"}:
        raw = yaml.safe_load(text) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"YAML config {path} must be a flat mapping")
        flat: dict[str, Any] = {}
        for key, value in raw.items():
            if isinstance(value, (dict, list)):
                raise ConfigError(f"config key {key!r} in {path} must be a scalar")
            flat[_normalise_key(str(key))] = value
        return flat
    values: dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        try:
            key, value = parse_assignment(stripped)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{number}: {exc}") from exc
        values[key] = value
    return values


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, Any]:
    environ = os.environ if environ is None else environ
    return {
        _normalise_key(name[len(ENV_PREFIX):]): _coerce(value)
        for name, value in environ.items()
        if name.startswith(ENV_PREFIX)
    }


def build_config(
    path: Path | None = None,
    overrides: Iterable[str] = (),
    environ: Mapping[str, str] | None = None,
    **explicit: Any,
) -> ExperimentConfig:
    """Merge file < environment < --set overrides < explicit flags and validate."""
    values: dict[str, Any] = {}
    if path is not None:
        values.update(load_config_file(path))
    values.update(env_overrides(environ))
    for item in overrides:
        key, value = parse_assignment(item)
        values[key] = value
    values.update({_normalise_key(k): v for k, v in explicit.items() if v is not None})
    values = {k: v for k, v in values.items() if v is not None}
    try:
        config = ExperimentConfig.model_validate(values)
    except ValidationError as exc:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in exc.errors()
        )
        raise ConfigError(problems) from exc
    logger.debug("config %s resolved to %s", config.config_hash()[:12], config.canonical())
    return config


def read_path_csv(path: Path) -> SamplePath:
    """Ingest a path written as ``t,x[,db]``; db in row i is the increment over [t_i, t_{i+1})."""
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            if "t" not in fields or "x" not in fields:
                raise InvalidArgumentError(f"{path} needs columns t and x, found {fields}")
            rows = list(reader)
    except OSError as exc:
        raise InvalidArgumentError(f"cannot read path {path}: {exc}") from exc
    if len(rows) < 2:
        raise InvalidArgumentError(f"{path} holds fewer than two samples")
    try:
        t = np.array([float(row["t"]) for row in rows])
        x = np.array([float(row["x"]) for row in rows])
        db = np.array([float(row["db"]) for row in rows[:-1]]) if "db" in fields else np.empty(0)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{path} contains a non-numeric entry: {exc}") from exc
    if t[0] != 0.0:
        raise InvalidArgumentError(f"{path} must start at t = 0")
    steps = np.diff(t)
    dt = float(steps[0])
    if dt <= 0 or not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
        raise InvalidArgumentError(f"{path} is not sampled on a regular grid")
    grid = SimGrid(t_max=(t.size - 1) * dt, dt=dt)
    return SamplePath(grid=grid, values=x, driving_increments=db, scheme=Scheme.OBSERVED)
