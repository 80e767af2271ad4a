"""Command-line interface: split, train, sweep, evaluate, report."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import data as data_mod
from .metrics import confusion_matrix, metrics_report
from .models import restore_model
from .runner import (
    SweepSpec,
    load_config,
    load_run_result,
    run_experiment,
    run_sweep,
)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--data-root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ratios", default="0.7,0.15,0.15", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path())
def split(data_root: str, ratios: str, seed: int, out: str):
    """Build a manifest and a deterministic stratified split."""
    parts = tuple(float(r) for r in ratios.split(","))
    if len(parts) != 3:
        raise click.BadParameter("ratios must be three comma-separated fractions")
    manifest = data_mod.build_manifest(data_root)
    assignment = data_mod.stratified_split(manifest, parts, seed)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data_mod.save_manifest(manifest, out_dir / "manifest.tsv")
    data_mod.save_split(assignment, out_dir / "splits.tsv")
    click.echo(
        f"{manifest.label_space.size} classes, {len(manifest.entries)} images: "
        f"train={len(assignment.train)} val={len(assignment.val)} test={len(assignment.test)}"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--data-root", default=None, type=click.Path(), help="Override config/env data root.")
@click.option("--output-dir", default=None, type=click.Path(), help="Override config output dir.")
def train(config_path: str, data_root: str | None, output_dir: str | None):
    """Run one experiment from a config file."""
    cfg = load_config(config_path)
    if data_root:
        cfg.data_root = data_root
    if output_dir:
        cfg.output_dir = output_dir
    result = run_experiment(cfg)
    click.echo(
        f"best epoch {result.best.epoch} "
        f"(val acc {result.best.val_accuracy:.4f}), "
        f"test acc {result.report.accuracy:.4f}, "
        f"{result.wall_clock_minutes:.2f} min"
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--axis", required=True, type=click.Choice(["batch_size", "strategy_lr", "backbone"]))
@click.option("--values", required=True, help="Comma-separated axis values.")
@click.option("--out", required=True, type=click.Path())
@click.option("--data-root", default=None, type=click.Path())
def sweep(config_path: str, axis: str, values: str, out: str, data_root: str | None):
    """Run a one-axis grid of experiments sharing the base config."""
    cfg = load_config(config_path)
    if data_root:
        cfg.data_root = data_root
    if axis == "batch_size":
        parsed = [int(v) for v in values.split(",")]
    elif axis == "strategy_lr":
        parsed = values.split(";") if ";" in values else [values]
    else:
        parsed = values.split(",")
    rows = run_sweep(SweepSpec(cfg, axis, parsed), out)
    from .report import render_table

    table = render_table(
        rows,
        columns=["value", "status", "best_val_accuracy", "test_accuracy", "wall_clock_minutes"],
        highlight="test_accuracy",
    )
    (Path(out) / "sweep_summary.csv").write_text(table.csv)
    (Path(out) / "sweep_table.txt").write_text(table.text)
    click.echo(table.text)
    if any(r["status"] == "failed" for r in rows):
        sys.exit(1)


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--splits", "splits_path", required=True, type=click.Path(exists=True))
@click.option("--split", "split_name", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--batch-size", default=8, show_default=True, type=int)
def evaluate(checkpoint: str, manifest_path: str, splits_path: str, split_name: str, batch_size: int):
    """Evaluate a saved checkpoint on one split."""
    from .datasets import ManifestImageDataset
    from .training import predict

    manifest = data_mod.load_manifest(manifest_path)
    assignment = data_mod.load_split(splits_path)
    dataset = ManifestImageDataset(manifest, assignment, split_name)
    model, meta = restore_model(checkpoint)
    y_true, y_pred = predict(model, dataset, batch_size=batch_size)
    cm = confusion_matrix(y_true, y_pred, manifest.label_space.size, manifest.label_space.names)
    report = metrics_report(cm)
    click.echo(json.dumps(report.to_dict(), indent=2))


@main.command("report")
@click.option("--runs", "runs_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path())
def report_cmd(runs_dir: str, out: str):
    """Render tables and figures for every completed run under a directory."""
    from .report import (
        render_confusion_heatmap,
        render_per_class_bars,
        render_table,
    )

    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for run_dir in sorted(Path(runs_dir).iterdir()):
        if not (run_dir / "result.json").exists():
            continue
        result = load_run_result(run_dir)
        rows.append(
            {
                "run": run_dir.name,
                "backbone": result.config.backbone,
                "strategy": result.config.strategy,
                "batch_size": result.config.batch_size,
                "test_accuracy": result.report.accuracy,
                "macro_precision": result.report.macro_precision,
                "macro_recall": result.report.macro_recall,
                "wall_clock_minutes": result.wall_clock_minutes,
            }
        )
        render_confusion_heatmap(
            result.confusion, out_dir / f"{run_dir.name}_confusion.png"
        )
        render_per_class_bars(
            result.confusion.class_names,
            [r.per_class_accuracy or 0.0 for r in result.report.per_class],
            out_dir / f"{run_dir.name}_per_class.png",
        )
    if not rows:
        raise click.ClickException(f"no completed runs under {runs_dir}")
    table = render_table(
        rows,
        columns=[
            "run", "backbone", "strategy", "batch_size",
            "test_accuracy", "macro_precision", "macro_recall", "wall_clock_minutes",
        ],
        highlight="test_accuracy",
    )
    (out_dir / "comparison.txt").write_text(table.text)
    (out_dir / "comparison.csv").write_text(table.csv)
    click.echo(table.text)


if __name__ == "__main__":
    main()
