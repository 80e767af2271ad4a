"""Training engine for the three transfer-learning strategies.

All three strategies (linear probing, fine-tuning, and the two-stage
combined schedule) run through one engine parameterized by a list of
stages. The best checkpoint is selected on validation accuracy, ties
broken toward the earliest epoch.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch
from torch import nn

from .models import (
    ClassifierModel,
    parameter_digest,
    save_checkpoint,
    set_trainability,
)

STRATEGY_KINDS = ("linear_probe", "fine_tune", "combined")


class StrategyError(Exception):
    pass


class TrainingDivergedError(Exception):
    def __init__(self, epoch: int, batch: int, lr: float):
        super().__init__(
            f"non-finite loss at epoch {epoch}, batch {batch}, lr {lr}"
        )
        self.epoch = epoch
        self.batch = batch
        self.lr = lr


@dataclass(frozen=True)
class StageSpec:
    epochs: int
    initial_lr: float
    backbone_trainable: bool

    def __post_init__(self):
        if self.epochs < 1:
            raise StrategyError(f"epochs must be >= 1, got {self.epochs}")
        if self.initial_lr <= 0:
            raise StrategyError(f"learning rate must be > 0, got {self.initial_lr}")


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    stages: tuple[StageSpec, ...]


def make_strategy(kind: str, total_epochs: int, lr_grid: Sequence[float]) -> StrategySpec:
    """Build a strategy: single-stage for linear_probe/fine_tune, or a
    two-stage frozen-then-unfrozen schedule splitting the epochs evenly."""
    if kind not in STRATEGY_KINDS:
        raise StrategyError(f"unknown strategy {kind!r}; choose from {STRATEGY_KINDS}")
    lrs = list(lr_grid)
    if kind == "combined":
        if len(lrs) != 2:
            raise StrategyError("combined strategy requires two learning rates")
        e1 = total_epochs // 2
        e2 = total_epochs - e1
        stages = (
            StageSpec(e1, lrs[0], backbone_trainable=False),
            StageSpec(e2, lrs[1], backbone_trainable=True),
        )
    else:
        if len(lrs) != 1:
            raise StrategyError(f"{kind} requires exactly one learning rate")
        stages = (
            StageSpec(total_epochs, lrs[0], backbone_trainable=(kind == "fine_tune")),
        )
    return StrategySpec(kind, stages)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int  # 1-based, contiguous across stages
    stage: int  # 1-based stage index
    lr: float
    train_loss: float
    train_accuracy: float
    val_accuracy: float


@dataclass
class TrainingLog:
    records: list[EpochRecord] = field(default_factory=list)
    wall_clock_minutes: float = 0.0
    stage_backbone_digests: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class CheckpointRef:
    path: str  # empty when the checkpoint is held in memory only
    epoch: int
    val_accuracy: float


def select_best_checkpoint(
    log: TrainingLog, checkpoints: Sequence[CheckpointRef]
) -> CheckpointRef:
    """Argmax over validation accuracy; ties go to the earliest epoch."""
    if not checkpoints:
        raise StrategyError("no checkpoints to select from")
    logged = {r.epoch for r in log.records}
    for ref in checkpoints:
        if ref.epoch not in logged:
            raise StrategyError(f"checkpoint epoch {ref.epoch} absent from log")
    return max(checkpoints, key=lambda c: (c.val_accuracy, -c.epoch))


def _batches(n: int, batch_size: int, order: Sequence[int]):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def _collate(dataset, indices) -> tuple[torch.Tensor, torch.Tensor]:
    xs, ys = zip(*(dataset[i] for i in indices))
    return torch.stack(xs), torch.tensor(ys, dtype=torch.long)


@torch.no_grad()
def evaluate_accuracy(
    model: ClassifierModel, dataset, batch_size: int = 32, device: str = "cpu"
) -> float:
    model.network.eval()
    correct = 0
    n = len(dataset)
    for idx in _batches(n, batch_size, range(n)):
        x, y = _collate(dataset, idx)
        pred = model.forward(x.to(device)).argmax(dim=1).cpu()
        correct += int((pred == y).sum())
    return correct / n


@torch.no_grad()
def predict(
    model: ClassifierModel, dataset, batch_size: int = 32, device: str = "cpu"
) -> tuple[list[int], list[int]]:
    """Returns (y_true, y_pred) over the whole dataset in index order."""
    model.network.eval()
    y_true: list[int] = []
    y_pred: list[int] = []
    n = len(dataset)
    for idx in _batches(n, batch_size, range(n)):
        x, y = _collate(dataset, idx)
        pred = model.forward(x.to(device)).argmax(dim=1).cpu()
        y_true.extend(int(v) for v in y)
        y_pred.extend(int(v) for v in pred)
    return y_true, y_pred


def train(
    model: ClassifierModel,
    strategy: StrategySpec,
    train_set,
    val_set,
    *,
    batch_size: int,
    seed: int,
    device: str = "cpu",
    checkpoint_dir: str | Path | None = None,
    lr_schedule: Callable[[float, int], float] | None = None,
) -> tuple[ClassifierModel, TrainingLog, CheckpointRef]:
    """Run all stages of a strategy with Adam + cross-entropy.

    Per stage: set parameter-group trainability, then optimize at the
    stage's learning rate (constant unless an lr_schedule hook is given).
    Validation accuracy is measured every epoch; the returned checkpoint
    is the best-on-validation state. Shuffle order derives from the seed
    alone, so runs are reproducible.
    """
    if len(train_set) == 0:
        raise StrategyError("training set is empty")
    if len(val_set) == 0:
        raise StrategyError("validation set is empty: checkpoint selection impossible")
    if batch_size < 1:
        raise StrategyError(f"batch_size must be >= 1, got {batch_size}")

    torch.manual_seed(seed)
    shuffle_gen = torch.Generator().manual_seed(seed)
    loss_fn = nn.CrossEntropyLoss()
    model.network.to(device)

    log = TrainingLog()
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    best_state: dict | None = None
    best_ref: CheckpointRef | None = None
    refs: list[CheckpointRef] = []
    epoch = 0
    n = len(train_set)

    start = time.monotonic()
    for stage_idx, stage in enumerate(strategy.stages, start=1):
        set_trainability(model, stage.backbone_trainable, head_trainable=True)
        optimizer = torch.optim.Adam(model.trainable_parameters(), lr=stage.initial_lr)
        for stage_epoch in range(1, stage.epochs + 1):
            epoch += 1
            lr = stage.initial_lr
            if lr_schedule is not None:
                lr = lr_schedule(stage.initial_lr, stage_epoch)
                for group in optimizer.param_groups:
                    group["lr"] = lr

            # frozen backbone: eval mode so batch-norm running stats stay
            # fixed too; the affine head is mode-insensitive
            model.network.train(stage.backbone_trainable)
            order = torch.randperm(n, generator=shuffle_gen).tolist()
            total_loss = 0.0
            total_correct = 0
            for batch_idx, indices in enumerate(_batches(n, batch_size, order)):
                x, y = _collate(train_set, indices)
                x, y = x.to(device), y.to(device)
                optimizer.zero_grad()
                logits = model.forward(x)
                loss = loss_fn(logits, y)
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(epoch, batch_idx, lr)
                loss.backward()
                optimizer.step()
                total_loss += float(loss.detach()) * len(indices)
                total_correct += int((logits.argmax(dim=1) == y).sum())

            val_acc = evaluate_accuracy(model, val_set, batch_size=batch_size, device=device)
            log.records.append(
                EpochRecord(
                    epoch=epoch,
                    stage=stage_idx,
                    lr=lr,
                    train_loss=total_loss / n,
                    train_accuracy=total_correct / n,
                    val_accuracy=val_acc,
                )
            )

            path = str(ckpt_dir / "best.pt") if ckpt_dir is not None else ""
            ref = CheckpointRef(path=path, epoch=epoch, val_accuracy=val_acc)
            refs.append(ref)
            if best_ref is None or val_acc > best_ref.val_accuracy:
                best_ref = ref
                best_state = {
                    k: v.detach().cpu().clone()
                    for k, v in model.network.state_dict().items()
                }
                if ckpt_dir is not None:
                    save_checkpoint(
                        model, ckpt_dir / "best.pt",
                        {"epoch": epoch, "val_accuracy": val_acc},
                    )
        log.stage_backbone_digests.append(parameter_digest(model, "backbone"))

    log.wall_clock_minutes = (time.monotonic() - start) / 60.0
    if ckpt_dir is not None:
        save_checkpoint(
            model, ckpt_dir / "last.pt",
            {"epoch": epoch, "val_accuracy": log.records[-1].val_accuracy},
        )

    best = select_best_checkpoint(log, refs)
    assert best_state is not None
    return model, log, best


def load_best_state(model: ClassifierModel, ref: CheckpointRef) -> ClassifierModel:
    """Load the selected checkpoint's weights back into the model."""
    from .models import load_checkpoint

    if not ref.path:
        raise StrategyError("checkpoint ref has no on-disk path")
    state, _ = load_checkpoint(ref.path)
    model.network.load_state_dict(state)
    return model


# ---------------------------------------------------------------------------
# Log persistence: one structured-text record per epoch.
# ---------------------------------------------------------------------------

_LOG_FIELDS = ["epoch", "stage", "lr", "train_loss", "train_accuracy", "val_accuracy"]


def save_training_log(log: TrainingLog, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(_LOG_FIELDS)
        for r in log.records:
            writer.writerow(
                [r.epoch, r.stage, repr(r.lr), repr(r.train_loss),
                 repr(r.train_accuracy), repr(r.val_accuracy)]
            )
        writer.writerow(["# wall_clock_minutes", repr(log.wall_clock_minutes)])


def load_training_log(path: str | Path) -> TrainingLog:
    log = TrainingLog()
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)  # header
        for row in reader:
            if row[0] == "# wall_clock_minutes":
                log.wall_clock_minutes = float(row[1])
                continue
            log.records.append(
                EpochRecord(
                    epoch=int(row[0]), stage=int(row[1]), lr=float(row[2]),
                    train_loss=float(row[3]), train_accuracy=float(row[4]),
                    val_accuracy=float(row[5]),
                )
            )
    return log
