# src/cli.py
"""
Command-line entry point: python -m src.cli <command> [options]

Commands
--------
generate   write a synthetic dataset directory
inspect    print dataset statistics (sensors, edges, timesteps, mean, std)
train      fit G-SWaN; writes best/final checkpoints, history.csv, resolved config
evaluate   per-step and horizon metrics for a checkpoint, next to HA and persistence
forecast   next-F-step forecast after the last L observed steps
analyze    embedding probe, adjacency similarity, A_adp heatmap, scatter exports

Exit codes: 0 success, 2 usage/config/data errors, 3 numeric failure.
"""

from __future__ import annotations

import functools
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import click
import numpy as np
import pandas as pd

from src.config import ABLATIONS, DATASET_PRESETS, RunConfig, load_run_config, setup_logging, write_resolved_config
from src.errors import (
    ConfigError,
    DatasetFormatError,
    DimensionError,
    ExportError,
    FitError,
    GradientCheckError,
    GSwanError,
    SplitTooSmallError,
    TrainingDiverged,
    WindowError,
)
from src.evaluate import analysis, baselines, exporters
from src.evaluate.metrics import MetricsReport, horizon_report, reports_frame
from src.extract.synthetic import generate_graph, generate_traffic, synth_manifest
from src.extract.traffic_dir import load_dataset
from src.load.checkpoint import load_checkpoint, save_checkpoint
from src.load.to_disk import write_dataset, write_frame, write_json, write_text
from src.model import gswan
from src.model.gswan import ModelParams, init_model
from src.schema import STEP_SECONDS, TrafficDataset
from src.train.loop import PreparedData, evaluate_split, prepare_data, train
from src.transform.clean import Scaler, apply_scaler, impute_missing, summarize
from src.transform.features import build_adjacency

logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_NUMERIC = 3

USAGE_ERRORS = (ConfigError, DatasetFormatError, SplitTooSmallError, WindowError, ExportError, FitError, DimensionError)
NUMERIC_ERRORS = (TrainingDiverged, GradientCheckError)


# ---------- shared plumbing ----------

def handle_errors(fn: Callable) -> Callable:
    """Map package errors to stable exit codes with a one-line message on stderr."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NUMERIC_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(EXIT_NUMERIC) from None
        except USAGE_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(EXIT_USAGE) from None
        except GSwanError as exc:
            click.echo(f"error: {exc}", err=True)
            raise SystemExit(EXIT_USAGE) from None
    return wrapper


def common_options(fn: Callable) -> Callable:
    """--config / --seed / --out / --threads, shared by every command."""
    fn = click.option("--threads", type=int, default=None, help="Worker cap for evaluation (default 1).")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")(fn)
    fn = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Run seed (U64).")(fn)
    fn = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                      help="Run configuration file (key=value).")(fn)
    return fn


def resolve(config_path: Optional[str], **overrides: Any) -> RunConfig:
    return load_run_config(config_path, overrides)


def _dataset_path(cfg: RunConfig) -> Path:
    if not cfg.dataset:
        raise ConfigError("no dataset given (use --dataset or dataset= in the config file)")
    return Path(cfg.dataset)


def _load_checkpoint_for(path: str, d: TrafficDataset) -> Tuple[ModelParams, Scaler]:
    params, scaler, sensor_ids, _ = load_checkpoint(path)
    if params.n_sensors != d.n_sensors:
        raise ConfigError(
            f"checkpoint was trained on {params.n_sensors} sensors but the dataset has {d.n_sensors}"
        )
    if tuple(sensor_ids) != tuple(d.sensor_ids):
        logger.warning("checkpoint sensor ids differ from the dataset's; matching by position")
    return params, scaler


def _report_text(reports: List[MetricsReport]) -> str:
    return "\n\n".join(r.to_text() for r in reports) + "\n"


# ---------- group ----------

@click.group()
@click.option("--log-level", default=None, help="DEBUG, INFO, WARNING… (default GSWAN_LOG_LEVEL or INFO).")
def cli(log_level: Optional[str]) -> None:
    """G-SWaN traffic forecasting."""
    setup_logging(log_level)


# ---------- generate ----------

@cli.command()
@common_options
@click.option("--sensors", type=int, default=None, help="Number of sensors.")
@click.option("--days", type=int, default=None, help="Days of 5-minute readings.")
@click.option("--topology", type=click.Choice(["ring", "grid", "random"]), default=None)
@click.option("--p-edge", type=float, default=None, help="Edge probability for the random topology.")
@click.option("--metric-kind", type=click.Choice(["speed", "flow"]), default=None)
@click.option("--phase-spread", type=float, default=None, help="Max per-sensor peak offset (minutes).")
@click.option("--noise-std", type=float, default=None)
@click.option("--weekend-factor", type=float, default=None)
@click.option("--emit-flow/--no-emit-flow", default=None, help="Also write a flow channel (speed datasets).")
@handle_errors
def generate(config_path, seed, out, threads, sensors, days, topology, p_edge, metric_kind,
             phase_spread, noise_std, weekend_factor, emit_flow):
    """Write a synthetic dataset directory to --out."""
    if out is None:
        raise click.UsageError("--out is required for generate")
    cfg = resolve(
        config_path, seed=seed, out=out, threads=threads,
        **{
            "synth.n_sensors": sensors, "synth.days": days, "synth.topology": topology,
            "synth.p_edge": p_edge, "synth.metric_kind": metric_kind, "synth.phase_spread": phase_spread,
            "synth.noise_std": noise_std, "synth.weekend_factor": weekend_factor, "synth.emit_flow": emit_flow,
        },
    )
    print("=== generate START ===")
    edges = generate_graph(cfg.synth)
    ds = generate_traffic(cfg.synth, edges)
    written = write_dataset(ds, cfg.out, manifest=synth_manifest(cfg.synth, {"seed": cfg.seed}))
    write_resolved_config(cfg, cfg.out, extra=[("command", "generate")])
    print(f"Wrote {len(written)} files to {cfg.out}: {ds.n_sensors} sensors, {ds.n_timesteps} timesteps")
    print("=== generate DONE ===")


# ---------- inspect ----------

def preset_match(stats: Dict[str, float]) -> Optional[str]:
    for name, (n, e, k, _) in DATASET_PRESETS.items():
        if stats["sensors"] == n and stats["edges"] == e and stats["timesteps"] == k:
            return name
    return None


@cli.command()
@common_options
@click.option("--dataset", type=click.Path(), default=None, help="Dataset directory.")
@click.option("--preset", type=click.Choice(sorted(DATASET_PRESETS)), default=None,
              help="Expected benchmark shape; mismatches are reported.")
@handle_errors
def inspect(config_path, seed, out, threads, dataset, preset):
    """Print dataset statistics."""
    cfg = resolve(config_path, seed=seed, out=out, threads=threads, dataset=dataset)
    ds = load_dataset(_dataset_path(cfg))
    stats = summarize(ds)
    matched = preset_match(stats)

    frame = pd.DataFrame([stats])
    click.echo(frame.to_string(index=False))
    click.echo(f"metric: {ds.metric_kind}; channels: {', '.join(ds.channel_names)}")
    if matched:
        click.echo(f"shape matches {matched}")
    if preset:
        n, e, k, ratio = DATASET_PRESETS[preset]
        for key, want in (("sensors", n), ("edges", e), ("timesteps", k)):
            if stats[key] != want:
                click.echo(f"warning: {preset} expects {key}={want}, found {stats[key]}", err=True)
        click.echo(f"{preset} canonical split: {':'.join(str(p) for p in ratio)}")

    write_json({"summary": stats, "preset_match": matched, "channels": list(ds.channel_names)},
               Path(cfg.out) / "summary.json")
    write_resolved_config(cfg, cfg.out, extra=[("command", "inspect")])


# ---------- train ----------

@cli.command(name="train")
@common_options
@click.option("--dataset", type=click.Path(), default=None, help="Dataset directory.")
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None, help="Base learning rate lr0.")
@click.option("--ablation", type=click.Choice(list(ABLATIONS)), default=None)
@handle_errors
def train_cmd(config_path, seed, out, threads, dataset, epochs, batch_size, lr, ablation):
    """Train on the dataset's train split, selecting by validation MAE."""
    cfg = resolve(
        config_path, seed=seed, out=out, threads=threads, dataset=dataset, ablation=ablation,
        **{"train.epochs": epochs, "train.batch_size": batch_size, "train.lr0": lr},
    )
    out_dir = Path(cfg.out)
    write_resolved_config(cfg, out_dir, extra=[("command", "train"), ("ablation", cfg.ablation)])

    print("=== train START ===")
    ds = load_dataset(_dataset_path(cfg))
    data = prepare_data(ds, cfg.split, cfg.model.input_length, cfg.model.horizon)
    params = init_model(cfg.model, ds.n_sensors, cfg.seed)
    print(f"Model: {params.parameter_count()} parameters; windows train={data.train.size} val={data.val.size}")

    extra = {"seed": cfg.seed, "dataset": str(cfg.dataset)}
    try:
        best, history = train(params, data, cfg.train, cfg.augment, threads=cfg.threads)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            save_checkpoint(out_dir / "checkpoint_last_good.json", exc.last_good, data.scaler, ds.sensor_ids, extra)
        if exc.history is not None:
            write_frame(exc.history.to_frame(), out_dir / "history.csv")
        raise

    save_checkpoint(out_dir / "checkpoint_best.json", best, data.scaler, ds.sensor_ids,
                    {**extra, "best_epoch": history.best_epoch})
    save_checkpoint(out_dir / "checkpoint_final.json", params, data.scaler, ds.sensor_ids,
                    {**extra, "epochs": len(history)})
    write_frame(history.to_frame(), out_dir / "history.csv")
    if history.records:
        best_rec = history.records[history.best_epoch] if history.best_epoch is not None else history.records[-1]
        print(f"Best epoch {best_rec.epoch}: val MAE {best_rec.val_mae:.4f}")
    print("=== train DONE ===")


# ---------- evaluate ----------

def _model_report(params: ModelParams, data: PreparedData, split: str, cfg: RunConfig) -> Optional[MetricsReport]:
    try:
        y, h = evaluate_split(params, data, split, cfg.train.eval_batch_size, cfg.threads)
        if not np.all(np.isfinite(h)):
            raise TrainingDiverged("model produced non-finite forecasts", epoch=-1)
        return horizon_report(y, h, data.dataset.metric_kind, method="G-SWaN")
    except GSwanError as exc:
        logger.error("model evaluation failed: %s", exc)
        return None


def baseline_reports(data: PreparedData, split: str) -> List[MetricsReport]:
    arr = data.split(split)
    L, F = data.input_length, data.horizon
    kind = data.dataset.metric_kind
    ha = baselines.ha_baseline(data.splits.train, arr.target_timestamps(L, F))
    last = baselines.persistence_on_split(getattr(data.splits, split), L, F)
    return [
        horizon_report(arr.y, ha, kind, method="HA"),
        horizon_report(arr.y, last, kind, method="persistence"),
    ]


@cli.command()
@common_options
@click.option("--checkpoint", type=click.Path(dir_okay=False), required=True)
@click.option("--dataset", type=click.Path(), default=None, help="Dataset directory.")
@click.option("--split", type=click.Choice(["train", "val", "test"]), default="test", show_default=True)
@handle_errors
def evaluate(config_path, seed, out, threads, checkpoint, dataset, split):
    """Metrics per step and per horizon, side by side with the baselines."""
    cfg = resolve(config_path, seed=seed, out=out, threads=threads, dataset=dataset)
    out_dir = Path(cfg.out)
    write_resolved_config(cfg, out_dir, extra=[("command", "evaluate"), ("checkpoint", checkpoint), ("split", split)])

    ds = load_dataset(_dataset_path(cfg))
    params, scaler = _load_checkpoint_for(checkpoint, ds)
    data = prepare_data(ds, cfg.split, params.config.input_length, params.config.horizon, scaler=scaler)

    # baselines run on their own so they are reported whatever happens to the model
    reports = baseline_reports(data, split)
    model = _model_report(params, data, split, cfg)
    if model is not None:
        reports.insert(0, model)

    write_frame(reports_frame(reports), out_dir / "metrics.csv")
    write_text(_report_text(reports), out_dir / "metrics.txt")
    click.echo(_report_text(reports), nl=False)
    if model is None:
        click.echo("error: model evaluation failed; only baselines were reported", err=True)
        raise SystemExit(EXIT_NUMERIC)


# ---------- forecast ----------

def forecast_frame(params: ModelParams, ds: TrafficDataset, scaler: Scaler) -> pd.DataFrame:
    """Forecast the F steps after the last L observations, in original units."""
    L, F = params.config.input_length, params.config.horizon
    if ds.n_timesteps < L:
        raise WindowError(f"{ds.n_timesteps} timesteps cannot fill an input window of L={L}")
    recent = apply_scaler(scaler, impute_missing(ds.slice(ds.n_timesteps - L, ds.n_timesteps), scaler))
    x = np.asarray(recent.values[[0, 1]])[None]
    a_r = build_adjacency(ds.edges, ds.n_sensors, ds.sensor_ids).a_r
    h = scaler.inverse_metric(gswan.predict(params, x, a_r)[0])          # [F, N]

    last = int(ds.timestamps[-1])
    rows = [
        {"timestamp": last + STEP_SECONDS * (f + 1), "sensor": sensor, "step": f + 1, "value": float(h[f, n])}
        for f in range(F)
        for n, sensor in enumerate(ds.sensor_ids)
    ]
    return pd.DataFrame(rows, columns=["timestamp", "sensor", "step", "value"])


@cli.command()
@common_options
@click.option("--checkpoint", type=click.Path(dir_okay=False), required=True)
@click.option("--dataset", type=click.Path(), default=None, help="Dataset directory.")
@handle_errors
def forecast(config_path, seed, out, threads, checkpoint, dataset):
    """Write forecast.csv (timestamp, sensor, step, value)."""
    cfg = resolve(config_path, seed=seed, out=out, threads=threads, dataset=dataset)
    out_dir = Path(cfg.out)
    write_resolved_config(cfg, out_dir, extra=[("command", "forecast"), ("checkpoint", checkpoint)])

    ds = load_dataset(_dataset_path(cfg))
    params, scaler = _load_checkpoint_for(checkpoint, ds)
    frame = forecast_frame(params, ds, scaler)
    if not np.all(np.isfinite(frame["value"].to_numpy())):
        raise TrainingDiverged("model produced non-finite forecasts", epoch=-1)
    rows = write_frame(frame, out_dir / "forecast.csv")
    click.echo(f"wrote {rows} forecast rows to {out_dir / 'forecast.csv'}")


# ---------- analyze ----------

def _parse_range(text: Optional[str]) -> Optional[Tuple[int, int]]:
    if not text:
        return None
    try:
        start, stop = (int(p) for p in text.split(":"))
    except ValueError:
        raise ConfigError(f"--range must look like START:STOP, got {text!r}") from None
    return start, stop


@cli.command()
@common_options
@click.option("--checkpoint", type=click.Path(dir_okay=False), required=True)
@click.option("--dataset", type=click.Path(), default=None, help="Dataset directory.")
@click.option("--scatter", "scatter_sensors", multiple=True,
              help="Sensor for a fundamental-diagram export (repeatable).")
@click.option("--scatter-x", default="flow", show_default=True, help="Channel on the x axis.")
@click.option("--scatter-y", default="speed", show_default=True, help="Channel on the y axis.")
@click.option("--pair", "pairs", multiple=True, help="Sensor pair I,J for an association export (repeatable).")
@click.option("--range", "time_range", default=None, help="Timestep range START:STOP for pair exports.")
@handle_errors
def analyze(config_path, seed, out, threads, checkpoint, dataset, scatter_sensors, scatter_x, scatter_y,
            pairs, time_range):
    """Probe embeddings, compare adjacencies, export figure data; index.json lists the bundle."""
    cfg = resolve(config_path, seed=seed, out=out, threads=threads, dataset=dataset)
    out_dir = Path(cfg.out)
    files: List[str] = [write_resolved_config(cfg, out_dir, extra=[("command", "analyze"),
                                                                     ("checkpoint", checkpoint)]).name]

    ds = load_dataset(_dataset_path(cfg))
    params, _ = _load_checkpoint_for(checkpoint, ds)
    adj = build_adjacency(ds.edges, ds.n_sensors, ds.sensor_ids)

    bundle: Dict[str, Any] = {"sigma_d": adj.sigma_d, "probe": None, "adjacency_similarity": None}
    notices: List[str] = []

    exporters.export_adjacency(adj.a_r, ds.sensor_ids, out_dir / "physical_adjacency.csv")
    files.append("physical_adjacency.csv")

    emb = params.embeddings
    if emb is None:
        notices.append("checkpoint has no node embeddings; probe and adaptive adjacency skipped")
    else:
        a_adp = gswan.adaptive_adjacency(emb)
        exporters.export_adjacency(a_adp, ds.sensor_ids, out_dir / "adaptive_adjacency.csv")
        files.append("adaptive_adjacency.csv")
        bundle["adjacency_similarity"] = analysis.adjacency_similarity(adj.a_r, a_adp)
        bundle["top_adaptive_pairs"] = analysis.top_pairs(a_adp, list(ds.sensor_ids))
        if ds.coords is None:
            notices.append("dataset has no coords; embedding probe skipped")
        else:
            bundle["probe"] = analysis.probe_embeddings(emb, ds.coords, use_kernels=True).to_dict()

    for sensor in scatter_sensors:
        name = f"scatter_{sensor}.csv"
        exporters.export_scatter(ds, sensor, scatter_x, scatter_y, out_dir / name)
        files.append(name)

    rng = _parse_range(time_range)
    for pair in pairs:
        parts = [p.strip() for p in pair.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"--pair must look like I,J, got {pair!r}")
        name = f"pair_{parts[0]}_{parts[1]}.csv"
        exporters.export_pair_association(ds, parts[0], parts[1], rng, out_dir / name)
        files.append(name)

    for note in notices:
        click.echo(f"notice: {note}", err=True)
    bundle["notices"] = notices
    write_json(bundle, out_dir / "analysis.json")
    files.append("analysis.json")
    write_json({"files": sorted(files + ["index.json"])}, out_dir / "index.json")

    if bundle["adjacency_similarity"] is not None:
        click.echo(f"cosine(A_r, A_adp) = {bundle['adjacency_similarity']:.4f}")
    if bundle["probe"] is not None:
        click.echo(f"probe R2 linear = {bundle['probe']['linear']['r2']:.4f}, "
                   f"kernel = {bundle['probe']['kernel']['r2']:.4f}")


if __name__ == "__main__":
    cli()
