"""CSV and JSON artefacts written by the command line tools."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from src.domain.models import EstimatorTrace, InvalidArgumentError, SamplePath, TheoremReport

REPORT_COLUMNS = [
    "theorem_id",
    "statistic",
    "value",
    "reference",
    "tolerance",
    "pass",
    "T",
    "dt",
    "alpha",
    "alpha_prime",
    "replicas",
    "seed_root",
]
TRACE_COLUMNS = ["t", "theta_hat", "theta_tilde", "theta_bar"]
LEMMA_COLUMNS = ["t", "alpha", "r1", "r2", "r3", "r4"]
SUMMARY_COLUMNS = ["t", "estimator", "q10", "q50", "q90"]
DERIVED_KEYS = ["sigma_hat2", "theta_check", "sigma_tilde2", "theta_breve"]


def _fmt(value: Any) -> Any:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value).lower()
    return value


def _write_rows(fh: Any, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> None:
    writer = csv.DictWriter(fh, fieldnames=list(fieldnames), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row.get(k, "")) for k in fieldnames})


def write_csv(path: Path, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        _write_rows(fh, fieldnames, rows)
    return path


def format_csv(fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    _write_rows(buffer, fieldnames, rows)
    return buffer.getvalue()


def read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path: Path, obj: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, ensure_ascii=False, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_path_csv(path: SamplePath, target: Path) -> Path:
    with_db = path.has_brownian_increments
    times = path.times
    db = path.brownian_increments if with_db else None

    def rows():
        for i in range(path.n_steps + 1):
            row = {"t": float(times[i]), "x": float(path.values[i])}
            if with_db:
                row["db"] = float(db[i]) if i < path.n_steps else ""
            yield row

    return write_csv(target, ["t", "x", "db"] if with_db else ["t", "x"], rows())


def write_trace_csv(trace: EstimatorTrace, target: Path) -> Path:
    """One row per checkpoint of the trace."""
    cp = trace.checkpoint_index
    columns = {
        "t": trace.times[cp],
        "theta_hat": trace.require("theta_hat")[cp],
        "theta_tilde": trace.require("theta_tilde")[cp],
        "theta_bar": trace.require("theta_bar")[cp],
    }
    rows = ({name: float(values[k]) for name, values in columns.items()} for k in range(cp.size))
    return write_csv(target, TRACE_COLUMNS, rows)


def report_rows(reports: Iterable[TheoremReport], context: Mapping[str, Any]) -> list[dict[str, Any]]:
    rows = []
    for report in reports:
        row = dict(context)
        row.update(
            theorem_id=str(report.theorem_id),
            statistic=report.statistic,
            value=report.value,
            reference=report.reference,
            tolerance=report.tolerance,
            **{"pass": report.passed},
        )
        rows.append(row)
    return rows


def write_reports_csv(reports: Iterable[TheoremReport], context: Mapping[str, Any], target: Path) -> Path:
    return write_csv(target, REPORT_COLUMNS, report_rows(reports, context))


def read_reports_csv(path: Path) -> list[dict[str, Any]]:
    rows = read_csv(path)
    missing = [c for c in REPORT_COLUMNS if rows and c not in rows[0]]
    if missing:
        raise InvalidArgumentError(f"{path} is not a reports table; missing {missing}")
    for row in rows:
        row["pass"] = row["pass"].strip().lower() == "true"
        for key in ("value", "reference", "tolerance"):
            row[key] = float(row[key])
    return rows


def write_provenance(target: Path, config_hash: str, config: Mapping[str, Any], files: Iterable[Path], **extra: Any) -> Path:
    record = {
        "config_hash": config_hash,
        "config": dict(config),
        "files": {p.name: {"sha256": sha256_file(p), "config_hash": config_hash} for p in files},
    }
    record.update(extra)
    return write_json(target, record)
