"""Micro/per-class F1 and single-modality evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.metrics import confusion_matrix as _sk_confusion_matrix

from .ingest import EMOTIONS

N_CLASSES = len(EMOTIONS)
TEST_MODALITIES = ("audio", "video")


def _check(predictions, truths):
    p = np.asarray(predictions, dtype=np.intp).ravel()
    t = np.asarray(truths, dtype=np.intp).ravel()
    if p.shape != t.shape:
        raise ValueError(f"{p.size} predictions but {t.size} truths")
    if p.size == 0:
        raise ValueError("no predictions to score")
    return p, t


def confusion_matrix(predictions, truths, num_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    p, t = _check(predictions, truths)
    return _sk_confusion_matrix(t, p, labels=np.arange(num_classes))


def micro_f1(predictions, truths) -> float:
    """Micro F1 from pooled TP/FP/FN.

    For single-label multiclass predictions every error is one FP and one
    FN, so this equals accuracy.
    """
    p, t = _check(predictions, truths)
    cm = confusion_matrix(p, t, num_classes=max(N_CLASSES, int(max(p.max(), t.max())) + 1))
    tp = np.trace(cm)
    fp = cm.sum(axis=0).sum() - tp
    fn = cm.sum(axis=1).sum() - tp
    return float(2 * tp / (2 * tp + fp + fn))


def per_class_f1(predictions, truths, num_classes: int = N_CLASSES) -> np.ndarray:
    """One-vs-rest F1 per class; a class never predicted and never true scores 0."""
    cm = confusion_matrix(predictions, truths, num_classes)
    tp = np.diag(cm).astype(np.float64)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    out = np.zeros(num_classes)
    nz = denom > 0
    out[nz] = 2 * tp[nz] / denom[nz]
    return out


def format_score(value: float) -> str:
    """0.4503 -> '45.0' (three decimals, scaled by 100)."""
    return f"{round(float(value), 3) * 100:.1f}"


@dataclass
class Metrics:
    test_modality: str
    micro_f1: float
    per_class_f1: np.ndarray
    confusion: np.ndarray
    predictions: np.ndarray
    truths: np.ndarray

    def summary(self) -> str:
        parts = ", ".join(f"{name} {format_score(v)}" for name, v in zip(EMOTIONS, self.per_class_f1))
        return f"{self.test_modality}: micro F1 {format_score(self.micro_f1)} ({parts})"


def evaluate(model, split, test_modality: str) -> Metrics:
    """Score ``model`` on ``split`` using only ``test_modality``'s features.

    ``model`` must provide ``predict_features(split, modality)``; the trained
    models from :mod:`gazebed.trainer` and the estimator both do.
    """
    if test_modality not in TEST_MODALITIES:
        raise ValueError(f"test_modality must be one of {TEST_MODALITIES}, got {test_modality!r}")
    preds = np.asarray(model.predict_features(split, test_modality), dtype=np.intp)
    truths = np.asarray(split.labels, dtype=np.intp)
    num_classes = getattr(getattr(model, "config", None), "num_classes", N_CLASSES)
    return Metrics(
        test_modality=test_modality,
        micro_f1=micro_f1(preds, truths),
        per_class_f1=per_class_f1(preds, truths, num_classes),
        confusion=confusion_matrix(preds, truths, num_classes),
        predictions=preds,
        truths=truths,
    )
