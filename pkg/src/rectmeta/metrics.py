"""Accuracy, label-correction accuracy and per-class reports."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import Dataset
from .model import ParamSet, predict


@dataclass
class EvalReport:
    accuracy: float
    per_class: np.ndarray  # NaN marks a class with no samples
    confusion: np.ndarray  # rows = true class, cols = predicted
    n: int

    def summary(self) -> str:
        return f"n={self.n} accuracy={self.accuracy:.4f}"

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "n", "correct", "accuracy"])
            for j in range(len(self.per_class)):
                acc = self.per_class[j]
                w.writerow([j, int(self.confusion[j].sum()), int(self.confusion[j, j]),
                            "" if np.isnan(acc) else f"{acc:.6f}"])
            w.writerow(["all", self.n, int(np.trace(self.confusion)), f"{self.accuracy:.6f}"])


def predicted_labels(params: ParamSet, features: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index
    return np.argmax(predict(params, features), axis=1)


def report_from_predictions(pred: np.ndarray, labels: np.ndarray, n_classes: int) -> EvalReport:
    pred, labels = np.asarray(pred), np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty set")
    if pred.shape != labels.shape:
        raise ValueError(f"prediction/label length mismatch: {pred.shape} vs {labels.shape}")
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    report = EvalReport(float(np.trace(conf)) / labels.size, np.empty(0), conf, int(labels.size))
    report.per_class = per_class_accuracy(report)
    return report


def accuracy(params: ParamSet, dataset: Dataset) -> EvalReport:
    """Argmax predictions scored against the clean labels."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    return report_from_predictions(predicted_labels(params, dataset.features),
                                   dataset.clean_labels, dataset.n_classes)


def label_correction_accuracy(params: ParamSet, features: np.ndarray, clean_labels: np.ndarray) -> float:
    """Fraction of training samples whose predicted label is the clean one."""
    clean_labels = np.asarray(clean_labels)
    if clean_labels.size == 0:
        raise ValueError("cannot evaluate an empty set")
    return float(np.mean(predicted_labels(params, features) == clean_labels))


def per_class_accuracy(report: EvalReport) -> np.ndarray:
    counts = report.confusion.sum(axis=1)
    diag = np.diag(report.confusion).astype(np.float64)
    out = np.full(len(counts), np.nan)
    has = counts > 0
    out[has] = diag[has] / counts[has]
    return out
