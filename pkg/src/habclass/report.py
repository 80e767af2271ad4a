"""Presentation artifacts: comparison tables, confusion heatmaps, bar charts.

Percentages are printed half-even at 2 decimals; CSV output keeps full
precision so nothing is lost to formatting.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import ConfusionMatrix

MISSING = "—"  # em dash cell marker for absent values


def format_fixed(value: float, decimals: int = 2) -> str:
    """Round half-even to a fixed number of decimals (0.969697 -> '96.97'
    when scaled to percent upstream)."""
    q = Decimal(1).scaleb(-decimals)
    return str(Decimal(repr(value)).quantize(q, rounding=ROUND_HALF_EVEN))


def format_percent(fraction: float, decimals: int = 2) -> str:
    return format_fixed(fraction * 100.0, decimals)


@dataclass
class RenderedTable:
    text: str
    csv: str
    footnotes: list[str] = field(default_factory=list)


# Columns whose stored values are fractions shown as percentages.
_PERCENT_COLUMNS = {
    "best_val_accuracy", "test_accuracy", "accuracy",
    "macro_precision", "macro_recall", "precision", "recall",
}


def render_table(
    rows: Sequence[dict],
    columns: Sequence[str],
    sort_key: str | None = None,
    highlight: str | None = "test_accuracy",
) -> RenderedTable:
    """Render run summaries as an aligned text table plus a CSV twin.

    Percent columns print at 2 decimals; the max-accuracy row is marked
    with '*'. Missing cells render as an em dash with a footnote; the CSV
    carries raw full-precision values.
    """
    rows = list(rows)
    if sort_key is not None:
        rows.sort(key=lambda r: (r.get(sort_key) is None, r.get(sort_key)))

    best_idx = None
    if highlight is not None:
        scored = [(i, r[highlight]) for i, r in enumerate(rows) if r.get(highlight) is not None]
        if scored:
            best_idx = max(scored, key=lambda t: t[1])[0]

    footnotes: list[str] = []
    display: list[list[str]] = []
    for i, row in enumerate(rows):
        cells = []
        for col in columns:
            value = row.get(col)
            if value is None:
                cells.append(MISSING)
                note = f"{MISSING}: value missing for column {col!r}"
                if note not in footnotes:
                    footnotes.append(note)
            elif col in _PERCENT_COLUMNS:
                cells.append(format_percent(float(value)))
            elif isinstance(value, float):
                cells.append(format_fixed(value))
            else:
                cells.append(str(value))
        if i == best_idx:
            cells[0] = f"*{cells[0]}"
        display.append(cells)

    widths = [
        max(len(col), *(len(r[j]) for r in display)) if display else len(col)
        for j, col in enumerate(columns)
    ]
    lines = [
        "  ".join(col.ljust(widths[j]) for j, col in enumerate(columns)),
        "  ".join("-" * w for w in widths),
    ]
    for cells in display:
        lines.append("  ".join(c.ljust(widths[j]) for j, c in enumerate(cells)))
    lines.extend(footnotes)
    if best_idx is not None:
        lines.append("* highest " + highlight)

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(columns)
    for row in rows:
        writer.writerow([row.get(col, "") for col in columns])

    return RenderedTable(text="\n".join(lines) + "\n", csv=buf.getvalue(), footnotes=footnotes)


def render_confusion_heatmap(
    cm: ConfusionMatrix, out_path: str | Path, title: str = "Confusion matrix"
) -> Path:
    """k x k heatmap with class names on both axes and integer annotations."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(1.0 + 0.7 * cm.k, 1.0 + 0.7 * cm.k))
    ax.imshow(cm.counts, cmap="Blues")
    ax.set_xticks(range(cm.k), cm.class_names, rotation=45, ha="right")
    ax.set_yticks(range(cm.k), cm.class_names)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    ax.set_title(title)
    threshold = cm.counts.max() / 2 if cm.total else 0
    for i in range(cm.k):
        for j in range(cm.k):
            ax.text(
                j, i, str(int(cm.counts[i, j])), ha="center", va="center",
                color="white" if cm.counts[i, j] > threshold else "black",
                fontsize=8,
            )
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_per_class_bars(
    class_names: Sequence[str],
    per_class_accuracy: Sequence[float],
    out_path: str | Path,
    title: str = "Per-class accuracy",
) -> Path:
    """One bar per class, y axis 0-100%, value annotations on top."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    values = [100.0 * v for v in per_class_accuracy]
    fig, ax = plt.subplots(figsize=(1.5 + 0.8 * len(class_names), 4.5))
    bars = ax.bar(range(len(class_names)), values, color="#4878cf")
    ax.set_xticks(range(len(class_names)), class_names, rotation=45, ha="right")
    ax.set_ylim(0, 105)
    ax.set_ylabel("Accuracy (%)")
    ax.set_title(title)
    for bar, v in zip(bars, values):
        ax.text(
            bar.get_x() + bar.get_width() / 2, v + 1, format_fixed(v),
            ha="center", va="bottom", fontsize=8,
        )
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def render_batch_size_curve(
    batch_sizes: Sequence[int],
    accuracies: Sequence[float],
    out_path: str | Path,
    title: str = "Validation accuracy vs batch size",
) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(batch_sizes, [100.0 * a for a in accuracies], marker="o")
    ax.set_xscale("log", base=2)
    ax.set_xticks(list(batch_sizes), [str(b) for b in batch_sizes])
    ax.set_xlabel("Batch size")
    ax.set_ylabel("Validation accuracy (%)")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
