"""Segmentation and clustering evaluation: confusion matrices, IoU, mIoU,
pseudo-label quality, adjusted Rand index."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np


def confusion_matrix(truth: np.ndarray, prediction: np.ndarray, num_classes: int) -> np.ndarray:
    """C x C counts; rows are truth, columns prediction."""
    truth = np.asarray(truth, dtype=np.int64)
    prediction = np.asarray(prediction, dtype=np.int64)
    if truth.shape != prediction.shape:
        raise ValueError("truth and prediction must align")
    valid = (truth >= 0) & (truth < num_classes) & (prediction >= 0) & (prediction < num_classes)
    idx = truth[valid] * num_classes + prediction[valid]
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def miou(cm: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-class IoU (nan where truth and prediction are both empty) and the
    mean over classes present in the truth."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / np.where(denom > 0, denom, 1.0), np.nan)
    present = cm.sum(axis=1) > 0
    mean = float(np.mean(iou[present])) if present.any() else float("nan")
    return iou, mean


@dataclass(frozen=True)
class PseudoLabelQuality:
    accepted: int
    correct: int
    precision: float | None  # None when nothing was accepted
    recall: float
    error_rate: float | None

    def __str__(self) -> str:
        prec = "n/a" if self.precision is None else f"{self.precision:.4f}"
        err = "n/a" if self.error_rate is None else f"{self.error_rate:.4f}"
        return f"accepted={self.accepted} precision={prec} recall={self.recall:.4f} error_rate={err}"


def pseudo_label_quality(
    predicted: np.ndarray, accepted: np.ndarray, gt: np.ndarray
) -> PseudoLabelQuality:
    """Quality of accepted pseudo labels against ground truth.

    ``recall`` counts correctly accepted labels against all candidate points.
    """
    predicted = np.asarray(predicted)
    accepted = np.asarray(accepted, dtype=bool)
    gt = np.asarray(gt)
    n_acc = int(accepted.sum())
    n_correct = int(np.sum(accepted & (predicted == gt)))
    precision = n_correct / n_acc if n_acc else None
    error_rate = 1.0 - precision if precision is not None else None
    recall = n_correct / len(gt) if len(gt) else 0.0
    return PseudoLabelQuality(
        accepted=n_acc,
        correct=n_correct,
        precision=precision,
        recall=recall,
        error_rate=error_rate,
    )


def adjusted_rand_index(clustering: np.ndarray, gt: np.ndarray) -> float:
    """ARI over points considered clustered (clustering id >= 0)."""
    clustering = np.asarray(clustering, dtype=np.int64)
    gt = np.asarray(gt, dtype=np.int64)
    mask = clustering >= 0
    a = clustering[mask]
    b = gt[mask]
    if len(a) == 0:
        return 0.0
    _, a = np.unique(a, return_inverse=True)
    _, b = np.unique(b, return_inverse=True)
    table = np.zeros((a.max() + 1, b.max() + 1), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    sum_comb = sum(comb(int(n), 2) for n in table.ravel() if n >= 2)
    sum_a = sum(comb(int(n), 2) for n in table.sum(axis=1))
    sum_b = sum(comb(int(n), 2) for n in table.sum(axis=0))
    total = comb(len(a), 2)
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_comb - expected) / (max_index - expected))
