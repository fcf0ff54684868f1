"""Report rendering: delimited text records plus matplotlib figures.

Figures are written PNG with stripped metadata so repeated runs stay
byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVEFIG = {"dpi": 110, "metadata": {"Software": None}}


def save_iou_bars(per_class_iou: np.ndarray, class_names, miou: float, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 3.2))
    values = np.nan_to_num(np.asarray(per_class_iou), nan=0.0)
    ax.bar(range(len(values)), values, color="#4878a8")
    ax.axhline(miou, color="#a84848", linestyle="--", linewidth=1, label=f"mIoU {miou:.3f}")
    ax.set_xticks(range(len(values)))
    ax.set_xticklabels(class_names, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("IoU")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def save_em_curve(miou_history, pseudo_added, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 3.2))
    xs = range(len(miou_history))
    ax.plot(xs, [100 * m for m in miou_history], marker="o", color="#4878a8", label="val mIoU")
    ax.set_xlabel("EM iteration (0 = warm-up)")
    ax.set_ylabel("mIoU (%)")
    ax.grid(alpha=0.3)
    if pseudo_added:
        twin = ax.twinx()
        twin.bar(
            [x + 1 for x in range(len(pseudo_added))],
            pseudo_added,
            width=0.25,
            color="#48a878",
            alpha=0.5,
            label="new pseudo labels",
        )
        twin.set_ylabel("pseudo labels added")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def save_label_coverage(stats, path: str | Path) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.0))
    kinds = ["sparse", "propagated", "negative", "pseudo"]
    rates = [
        stats.sparse_rate,
        stats.propagated_rate,
        stats.negative_rate,
        stats.pseudo / stats.training_points if stats.training_points else 0.0,
    ]
    ax.bar(kinds, [100 * r for r in rates], color=["#a84848", "#4878a8", "#c8a848", "#48a878"])
    ax.set_ylabel("rate (%)")
    ax.set_title(f"coverage {100 * stats.coverage:.1f}% of training points", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def eval_report_text(per_class_iou, class_names, miou: float, cm: np.ndarray) -> str:
    """Machine-readable per-class records, one line each, pipe-delimited."""
    lines = ["kind|class|name|value"]
    for c, (iou, name) in enumerate(zip(per_class_iou, class_names)):
        value = "nan" if np.isnan(iou) else f"{iou:.6f}"
        lines.append(f"iou|{c}|{name}|{value}")
    lines.append(f"miou|-|all|{miou:.6f}")
    for r in range(cm.shape[0]):
        row = ",".join(str(int(v)) for v in cm[r])
        lines.append(f"confusion_row|{r}|{class_names[r]}|{row}")
    return "\n".join(lines) + "\n"


def metrics_stream_line(em_iteration: int, epoch: int, step: int, diag) -> str:
    """One line-delimited training record."""
    return (
        f"em={em_iteration} epoch={epoch} step={step} lr={diag.lr:.6f} "
        f"loss={diag.loss_total:.6f} ce={diag.loss_ce:.6f} lovasz={diag.loss_lovasz:.6f} "
        f"neg={diag.loss_negative:.6f} assoc={diag.loss_assoc:.6f} clamped={diag.clamped_rows}"
    )
