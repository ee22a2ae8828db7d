"""Confusion matrix, accuracy and class-frequency-weighted precision / recall / F1 (percent)."""

from __future__ import annotations

import numpy as np

from .errors import EmptyMatrix, LengthMismatch

# Column names used in report CSVs.
TABLE_COLUMNS = (
    "Accuracy (%)", "W Avg. F-1 score (%)", "W Avg. recall (%)", "W Avg. precision (%)",
    "Total parameters", "Trainable parameters",
)


def confusion(y_true, y_pred, num_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise LengthMismatch(f"y_true has {y_true.size} labels, y_pred has {y_pred.size}")
    for name, arr in (("y_true", y_true), ("y_pred", y_pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} contains labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def per_class(cm: np.ndarray) -> dict[str, np.ndarray]:
    """Per-class precision, recall, F1 in percent; 0 wherever a denominator vanishes."""
    cm = np.asarray(cm, dtype=np.float64)
    tp = np.diag(cm)
    pred_pos = cm.sum(axis=0)
    true_pos = cm.sum(axis=1)
    precision = np.divide(tp, pred_pos, out=np.zeros_like(tp), where=pred_pos > 0) * 100
    recall = np.divide(tp, true_pos, out=np.zeros_like(tp), where=true_pos > 0) * 100
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return {"precision": precision, "recall": recall, "f1": f1, "support": true_pos}


def scores(cm: np.ndarray) -> dict[str, float]:
    cm = np.asarray(cm)
    total = cm.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix has no samples")
    pc = per_class(cm)
    weights = pc["support"] / total
    accuracy = float(np.trace(cm) / total * 100)
    return {
        "accuracy": accuracy,
        "weighted_precision": float(weights @ pc["precision"]),
        # support-weighted recall telescopes to sum(TP) / total, i.e. exactly the accuracy
        "weighted_recall": accuracy,
        "weighted_f1": float(weights @ pc["f1"]),
    }


def table_row(s: dict[str, float], total_params: int, trainable_params: int) -> dict[str, object]:
    return dict(zip(TABLE_COLUMNS, (
        round(s["accuracy"], 2), round(s["weighted_f1"], 2), round(s["weighted_recall"], 2),
        round(s["weighted_precision"], 2), total_params, trainable_params,
    )))
