from __future__ import annotations

import logging
from collections import defaultdict
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional

import typer

from src.config import settings
from src.domain.models import (
    ConfigError,
    DegeneratePathError,
    InvalidArgumentError,
    UnsupportedSchemeError,
    geometric_checkpoints,
)
from src.domain.schemas import ExperimentConfig
from src.ou.estimators import derived_estimates, estimate_trace
from src.ou.process import simulate_path
from src.services import reports
from src.services.config_io import ENV_PREFIX, build_config, read_path_csv
from src.services.montecarlo import lemma_table, run_experiment, split_seed

logger = logging.getLogger(__name__)

app = typer.Typer(
    help=(
        "Simulate Ornstein-Uhlenbeck paths, estimate the drift and verify the almost-sure limit theorems. "
        f"Config keys can also be set through {ENV_PREFIX}<KEY> environment variables."
    )
)

EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

CONFIG_OPTION = typer.Option(None, "--config", "-c", help="Flat key=value (or YAML) experiment config")
SET_OPTION = typer.Option(None, "--set", "-s", help="Override one config key, key=value; repeatable")
OUT_OPTION = typer.Option(None, "--out", "-o", help="Output directory (default: OUDRIFT_OUT_DIR or ./runs)")
SEED_OPTION = typer.Option(None, "--seed", help="Root seed, overrides seed-root")


@app.callback()
def main() -> None:
    logging.basicConfig(level=settings.log_level, format="%(levelname)s %(name)s: %(message)s")


@contextmanager
def _exit_codes() -> Iterator[None]:
    try:
        yield
    except (ConfigError, InvalidArgumentError, UnsupportedSchemeError) as exc:
        typer.secho(f"configuration error: {exc}", fg=typer.colors.RED, err=True)
        raise typer.Exit(EXIT_USAGE) from exc
    except (DegeneratePathError, OSError) as exc:
        typer.secho(f"error: {exc}", fg=typer.colors.RED, err=True)
        raise typer.Exit(EXIT_RUNTIME) from exc
    except typer.Exit:
        raise
    except Exception as exc:
        logger.exception("unexpected failure")
        typer.secho(f"internal error: {type(exc).__name__}: {exc}", fg=typer.colors.RED, err=True)
        raise typer.Exit(EXIT_RUNTIME) from exc


def _load(config: Optional[Path], overrides: Optional[List[str]], seed: Optional[int]) -> ExperimentConfig:
    return build_config(config, overrides or (), seed_root=seed)


def _out_dir(out: Optional[Path]) -> Path:
    return settings.out_dir if out is None else out


def _provenance(out: Path, command: str, cfg: ExperimentConfig, files: list[Path], **extra: object) -> Path:
    target = reports.write_provenance(
        out / f"{command}.provenance.json", cfg.config_hash(), cfg.canonical(), files, command=command, **extra
    )
    typer.secho(f"{len(files)} file(s) written to {out} (config {cfg.config_hash()[:12]})", fg=typer.colors.GREEN)
    return target


@app.command()
def simulate(
    config: Optional[Path] = CONFIG_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    out: Optional[Path] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
) -> None:
    """Simulate replica 0 of the configured experiment and write path.csv."""
    with _exit_codes():
        cfg = _load(config, overrides, seed)
        out = _out_dir(out)
        replica_seed = split_seed(cfg.seed_root, 0)
        path = simulate_path(cfg.params(), cfg.grid(), replica_seed, cfg.scheme)
        written = reports.write_path_csv(path, out / "path.csv")
        _provenance(out, "simulate", cfg, [written], replica_seed=replica_seed)


@app.command()
def estimate(
    config: Optional[Path] = CONFIG_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    out: Optional[Path] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    path_csv: Optional[Path] = typer.Option(None, "--path-csv", help="Estimate on an observed t,x[,db] path instead"),
) -> None:
    """Write the estimator trace (trace.csv) and the derived estimates (derived.json)."""
    with _exit_codes():
        cfg = _load(config, overrides, seed)
        out = _out_dir(out)
        if path_csv is None:
            path = simulate_path(cfg.params(), cfg.grid(), split_seed(cfg.seed_root, 0), cfg.scheme)
        else:
            path = read_path_csv(path_csv)
        horizon = path.grid.horizon
        start = min(max(cfg.t_min, cfg.burn_in), horizon)
        checkpoints = geometric_checkpoints(start, horizon, cfg.points_per_decade, path.dt)
        trace = estimate_trace(path, cfg.alpha, cfg.burn_in, checkpoints, cfg.bar_source)
        derived = derived_estimates(trace)
        files = [
            reports.write_trace_csv(trace, out / "trace.csv"),
            reports.write_json(out / "derived.json", derived.as_record()),
        ]
        for key, value in derived.as_record().items():
            typer.echo(f"{key} = {value:.6g}")
        _provenance(out, "estimate", cfg, files, source=str(path_csv) if path_csv else "simulated")


@app.command()
def verify(
    config: Optional[Path] = CONFIG_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    out: Optional[Path] = OUT_OPTION,
    seed: Optional[int] = SEED_OPTION,
    threads: Optional[int] = typer.Option(None, "--threads", "-j", min=1, help="Worker cap (default: OUDRIFT_THREADS)"),
) -> None:
    """Run the selected theorem checks and write reports.csv; exit 1 if any check fails."""
    with _exit_codes():
        cfg = _load(config, overrides, seed)
        if not cfg.theorems:
            raise ConfigError("nothing to verify: the theorem set is empty")
        out = _out_dir(out)
        result = run_experiment(cfg, threads)
        files = [reports.write_reports_csv(result.reports, result.row_context(), out / "reports.csv")]
        if result.summaries:
            files.append(reports.write_csv(out / "summary.csv", reports.SUMMARY_COLUMNS, result.summaries))
        if result.lemmas:
            files.append(reports.write_csv(out / "lemmas.csv", reports.LEMMA_COLUMNS, (r.as_record() for r in result.lemmas)))
        for report in result.reports:
            colour = typer.colors.GREEN if report.passed else typer.colors.RED
            typer.secho(
                f"{report.theorem_id:<4} {report.statistic:<32} {report.value:>12.6g}  ref {report.reference:.6g}",
                fg=colour,
            )
        excluded = result.provenance["excluded_replicas"]
        if excluded:
            typer.secho(f"{len(excluded)} degenerate replica(s) excluded: {excluded}", fg=typer.colors.YELLOW)
        extra = {k: v for k, v in result.provenance.items() if k != "config_hash"}
        _provenance(out, "verify", cfg, files, **extra)
    if not result.passed:
        typer.secho("verification failed", fg=typer.colors.RED, err=True)
        raise typer.Exit(EXIT_FAILED)


@app.command()
def lemmas(
    config: Optional[Path] = CONFIG_OPTION,
    overrides: Optional[List[str]] = SET_OPTION,
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Also write lemmas.csv into this directory"),
) -> None:
    """Print the weight-asymptotics residuals r1..r4 over a geometric t grid."""
    with _exit_codes():
        cfg = _load(config, overrides, None)
        times = geometric_checkpoints(max(cfg.t_min, 1.0), cfg.t_max, cfg.points_per_decade, cfg.dt)
        rows = [r.as_record() for r in lemma_table(cfg.alpha, times)]
        typer.echo(reports.format_csv(reports.LEMMA_COLUMNS, rows), nl=False)
        if out is not None:
            written = reports.write_csv(out / "lemmas.csv", reports.LEMMA_COLUMNS, rows)
            _provenance(out, "lemmas", cfg, [written])


@app.command()
def report(
    run_dir: Path = typer.Argument(..., help="Directory holding reports.csv (and optionally summary.csv)"),
) -> None:
    """Summarise a finished verification run from its CSV files alone."""
    with _exit_codes():
        rows = reports.read_reports_csv(run_dir / "reports.csv")
        by_theorem: dict[str, list[dict]] = defaultdict(list)
        for row in rows:
            by_theorem[row["theorem_id"]].append(row)
        for theorem, items in by_theorem.items():
            passed = all(item["pass"] for item in items)
            typer.secho(
                f"{theorem}: {'PASS' if passed else 'FAIL'} ({sum(i['pass'] for i in items)}/{len(items)})",
                fg=typer.colors.GREEN if passed else typer.colors.RED,
                bold=True,
            )
            for item in items:
                mark = "ok " if item["pass"] else "!! "
                typer.echo(f"  {mark}{item['statistic']:<32} {item['value']:.6g} (ref {item['reference']:.6g}, tol {item['tolerance']:.3g})")
        summary = run_dir / "summary.csv"
        if summary.exists():
            quantiles = reports.read_csv(summary)
            final = [r for r in quantiles if quantiles and r["t"] == quantiles[-1]["t"]]
            typer.echo("error quantiles at the final checkpoint:")
            for row in final:
                typer.echo(f"  {row['estimator']:<12} q10={float(row['q10']):.4g} q50={float(row['q50']):.4g} q90={float(row['q90']):.4g}")
    if not all(row["pass"] for row in rows):
        raise typer.Exit(EXIT_FAILED)


if __name__ == "__main__":
    app()
