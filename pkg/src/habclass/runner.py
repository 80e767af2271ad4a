"""Experiment orchestration: declarative configs, single runs, and sweeps.

A run is fully described by an ExperimentConfig. The pipeline is:
manifest -> stratified split -> model -> staged training -> best
checkpoint -> one-shot test evaluation -> persisted artifacts. The test
split is audited so it is never read before the final evaluation.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import torch
import yaml

from . import data as data_mod
from .data import IMAGENET_MEAN, IMAGENET_STD, build_manifest, stratified_split
from .datasets import CountingDataset, ManifestImageDataset
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    confusion_matrix,
    load_confusion_csv,
    metrics_report,
    save_confusion_csv,
)
from .models import BackboneSpec, REGISTRY, build_classifier
from .training import (
    CheckpointRef,
    TrainingLog,
    STRATEGY_KINDS,
    load_best_state,
    load_training_log,
    make_strategy,
    predict,
    save_training_log,
    train,
)

logger = logging.getLogger(__name__)

SWEEP_AXES = ("batch_size", "strategy_lr", "backbone")

ENV_DATA_ROOT = "HABCLASS_DATA_ROOT"
ENV_WEIGHTS_DIR = "HABCLASS_WEIGHTS_DIR"


class ConfigError(Exception):
    pass


class RunError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    data_root: str
    output_dir: str
    backbone: str = "resnet50"
    strategy: str = "fine_tune"
    total_epochs: int = 100
    learning_rates: list[float] = field(default_factory=lambda: [1e-4])
    batch_size: int = 8
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    split_seed: int = 0
    run_seed: int = 0
    pretrained: bool = True
    normalization_mean: list[float] = field(default_factory=lambda: list(IMAGENET_MEAN))
    normalization_std: list[float] = field(default_factory=lambda: list(IMAGENET_STD))
    weights_dir: str | None = None
    device: str = "cpu"

    def __post_init__(self):
        if self.backbone not in REGISTRY:
            raise ConfigError(
                f"unknown backbone {self.backbone!r}; choose from {sorted(REGISTRY)}"
            )
        if self.strategy not in STRATEGY_KINDS:
            raise ConfigError(
                f"unknown strategy {self.strategy!r}; choose from {STRATEGY_KINDS}"
            )
        if self.total_epochs < 1:
            raise ConfigError("total_epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        n_lrs = 2 if self.strategy == "combined" else 1
        if len(self.learning_rates) != n_lrs:
            raise ConfigError(
                f"strategy {self.strategy!r} needs {n_lrs} learning rate(s), "
                f"got {self.learning_rates}"
            )

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.train_frac, self.val_frac, self.test_frac)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def load_config(path: str | Path, env: dict | None = None) -> ExperimentConfig:
    """Parse a YAML config file. Unknown keys are fatal (catches typos).
    Environment variables override file values (config < env < CLI flag)."""
    raw = yaml.safe_load(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; known: {sorted(known)}")
    try:
        cfg = ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return apply_env_overrides(cfg, env)


def apply_env_overrides(cfg: ExperimentConfig, env: dict | None = None) -> ExperimentConfig:
    import os

    env = env if env is not None else os.environ
    if env.get(ENV_DATA_ROOT):
        cfg.data_root = env[ENV_DATA_ROOT]
    if env.get(ENV_WEIGHTS_DIR):
        cfg.weights_dir = env[ENV_WEIGHTS_DIR]
    return cfg


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))


@dataclass
class RunResult:
    config: ExperimentConfig
    config_hash: str
    log: TrainingLog
    best: CheckpointRef
    report: MetricsReport
    confusion: ConfusionMatrix
    wall_clock_minutes: float
    device_info: dict
    audit: dict
    output_dir: str


def _device_info(device: str) -> dict:
    return {
        "device": device,
        "cpu": platform.processor() or platform.machine(),
        "cuda_available": torch.cuda.is_available(),
        "torch": torch.__version__,
    }


def _write_status(out: Path, stage: str, state: str, error: str | None = None) -> None:
    status = {"stage": stage, "state": state}
    if error:
        status["error"] = error
    (out / "status.json").write_text(json.dumps(status, indent=2) + "\n")


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_hash = cfg.hash()
    (out / "config.json").write_text(
        json.dumps({"hash": cfg_hash, "config": cfg.to_dict()}, indent=2, sort_keys=True) + "\n"
    )

    stage = "ingest"
    try:
        _write_status(out, stage, "running")
        manifest = build_manifest(cfg.data_root)
        split = stratified_split(manifest, cfg.ratios, cfg.split_seed)
        data_mod.save_manifest(manifest, out / "manifest.tsv")
        data_mod.save_split(split, out / "splits.tsv")
        mean, std = cfg.normalization_mean, cfg.normalization_std
        train_set = ManifestImageDataset(manifest, split, "train", mean, std)
        val_set = ManifestImageDataset(manifest, split, "val", mean, std)
        test_set = CountingDataset(
            ManifestImageDataset(manifest, split, "test", mean, std)
        )

        stage = "model"
        _write_status(out, stage, "running")
        spec = BackboneSpec(cfg.backbone, pretrained=cfg.pretrained)
        model = build_classifier(
            spec, manifest.label_space.size, head_seed=cfg.run_seed,
            weights_dir=cfg.weights_dir,
        )
        strategy = make_strategy(cfg.strategy, cfg.total_epochs, cfg.learning_rates)

        stage = "train"
        _write_status(out, stage, "running")
        model, log, best = train(
            model, strategy, train_set, val_set,
            batch_size=cfg.batch_size, seed=cfg.run_seed, device=cfg.device,
            checkpoint_dir=out / "checkpoints",
        )
        save_training_log(log, out / "training_log.csv")
        reads_before_eval = test_set.reads

        stage = "evaluate"
        _write_status(out, stage, "running")
        load_best_state(model, best)
        y_true, y_pred = predict(model, test_set, batch_size=cfg.batch_size, device=cfg.device)
        cm = confusion_matrix(
            y_true, y_pred, manifest.label_space.size, manifest.label_space.names
        )
        report = metrics_report(cm)

        stage = "persist"
        _write_status(out, stage, "running")
        audit = {
            "test_reads_before_eval": reads_before_eval,
            "test_reads_total": test_set.reads,
        }
        save_confusion_csv(cm, out / "confusion.csv")
        (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
        result = RunResult(
            config=cfg, config_hash=cfg_hash, log=log, best=best, report=report,
            confusion=cm, wall_clock_minutes=log.wall_clock_minutes,
            device_info=_device_info(cfg.device), audit=audit, output_dir=str(out),
        )
        (out / "result.json").write_text(
            json.dumps(
                {
                    "config_hash": cfg_hash,
                    "best_epoch": best.epoch,
                    "best_val_accuracy": best.val_accuracy,
                    "wall_clock_minutes": log.wall_clock_minutes,
                    "test_accuracy": report.accuracy,
                    "macro_precision": report.macro_precision,
                    "macro_recall": report.macro_recall,
                    "device_info": result.device_info,
                    "audit": audit,
                },
                indent=2,
            )
            + "\n"
        )
        _write_status(out, "done", "done")
        return result
    except Exception as exc:
        _write_status(out, stage, "failed", error=str(exc))
        raise RunError(stage, exc) from exc


def load_run_result(run_dir: str | Path) -> RunResult:
    """Reload a persisted run, verifying its config hash."""
    out = Path(run_dir)
    stored = json.loads((out / "config.json").read_text())
    cfg = ExperimentConfig(**stored["config"])
    if cfg.hash() != stored["hash"]:
        raise ConfigError(f"config hash mismatch in {out}: run artifacts corrupted")
    summary = json.loads((out / "result.json").read_text())
    if summary["config_hash"] != stored["hash"]:
        raise ConfigError(f"result/config hash mismatch in {out}")
    log = load_training_log(out / "training_log.csv")
    cm = load_confusion_csv(out / "confusion.csv")
    report = metrics_report(cm)
    best = CheckpointRef(
        path=str(out / "checkpoints" / "best.pt"),
        epoch=summary["best_epoch"],
        val_accuracy=summary["best_val_accuracy"],
    )
    return RunResult(
        config=cfg, config_hash=stored["hash"], log=log, best=best, report=report,
        confusion=cm, wall_clock_minutes=summary["wall_clock_minutes"],
        device_info=summary["device_info"], audit=summary["audit"],
        output_dir=str(out),
    )


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    base: ExperimentConfig
    axis: str
    values: list

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; choose from {SWEEP_AXES}")
        if not self.values:
            raise ConfigError("sweep values must be non-empty")


def parse_strategy_lr(value: str) -> tuple[str, list[float]]:
    """Parse 'fine_tune:0.0001' / 'combined:0.001,0.0001' axis values."""
    kind, _, lrs = value.partition(":")
    if kind not in STRATEGY_KINDS or not lrs:
        raise ConfigError(f"bad strategy_lr value {value!r}; expected kind:lr[,lr]")
    return kind, [float(v) for v in lrs.split(",")]


def _derive_config(base: ExperimentConfig, axis: str, value, out_dir: Path) -> ExperimentConfig:
    d = base.to_dict()
    if axis == "batch_size":
        d["batch_size"] = int(value)
    elif axis == "backbone":
        d["backbone"] = str(value)
    else:
        kind, lrs = parse_strategy_lr(str(value))
        d["strategy"] = kind
        d["learning_rates"] = lrs
    d["output_dir"] = str(out_dir)
    return ExperimentConfig(**d)


def _axis_dirname(axis: str, value) -> str:
    safe = str(value).replace(":", "_").replace(",", "-").replace("/", "-")
    return f"{axis}={safe}"


def run_sweep(
    spec: SweepSpec,
    sweep_dir: str | Path,
    run_fn: Callable[[ExperimentConfig], RunResult] = run_experiment,
) -> list[dict]:
    """One run per axis value, all else identical (split seed shared, so
    every run sees the same data partitions). Individual failures do not
    abort the sweep; they are marked in the summary."""
    sweep_dir = Path(sweep_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    values = sorted(spec.values) if spec.axis == "batch_size" else list(spec.values)

    rows: list[dict] = []
    for value in values:
        run_dir = sweep_dir / _axis_dirname(spec.axis, value)
        row: dict[str, Any] = {"axis": spec.axis, "value": value, "run_dir": str(run_dir)}
        try:
            cfg = _derive_config(spec.base, spec.axis, value, run_dir)
            result = run_fn(cfg)
            row.update(
                status="ok",
                best_val_accuracy=result.best.val_accuracy,
                test_accuracy=result.report.accuracy,
                macro_precision=result.report.macro_precision,
                macro_recall=result.report.macro_recall,
                wall_clock_minutes=result.wall_clock_minutes,
            )
        except Exception as exc:
            logger.error("sweep run %s failed: %s", run_dir, exc)
            row.update(status="failed", error=str(exc))
        rows.append(row)

    (sweep_dir / "sweep_summary.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows


def timed_minutes(fn: Callable, *args, **kwargs) -> tuple[Any, float]:
    """Run fn, returning (result, monotonic wall-clock minutes)."""
    start = time.monotonic()
    result = fn(*args, **kwargs)
    return result, (time.monotonic() - start) / 60.0
