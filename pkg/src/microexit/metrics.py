"""Confusion matrices and accuracy / precision / recall / weighted-F1."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)


def confusion(true_labels, predicted_labels, n_classes):
    """Counts with rows = true class, columns = predicted class."""
    t = np.asarray(true_labels, dtype=int).ravel()
    p = np.asarray(predicted_labels, dtype=int).ravel()
    if t.shape != p.shape:
        raise DataError(f"{len(t)} true labels vs {len(p)} predictions")
    for name, arr in (("true", t), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise DataError(f"{name} label out of range [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


@dataclass(frozen=True)
class MetricSet:
    accuracy: float
    precision: float
    recall: float
    weighted_f1: float
    class_precision: np.ndarray
    class_recall: np.ndarray
    class_f1: np.ndarray
    weights: np.ndarray
    undefined: tuple = ()     # classes with a zero precision or recall denominator

    def as_row(self):
        return {"weighted_f1": self.weighted_f1, "accuracy": self.accuracy,
                "precision": self.precision, "recall": self.recall}


def compute_metrics(cm) -> MetricSet:
    """Overall precision/recall/F1 are averaged with support weights ``n_i / N``.

    With that weighting the overall recall equals the accuracy exactly.
    Classes without predictions (or support) score 0 and are listed in
    ``undefined``.
    """
    cm = np.asarray(cm, dtype=float)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0:
        raise DataError(f"confusion matrix must be square and non-empty, got shape {cm.shape}")
    total = cm.sum()
    if total <= 0:
        raise DataError("confusion matrix has no entries")
    diag = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    undefined = tuple(int(i) for i in np.flatnonzero((support == 0) | (predicted == 0)))
    if undefined:
        log.debug("classes %s have zero support or zero predictions", undefined)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(predicted > 0, diag / predicted, 0.0)
        recall = np.where(support > 0, diag / support, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    w = support / total
    return MetricSet(
        accuracy=float(diag.sum() / total),
        precision=float(w @ precision),
        recall=float(w @ recall),
        weighted_f1=float(w @ f1),
        class_precision=precision,
        class_recall=recall,
        class_f1=f1,
        weights=w,
        undefined=undefined,
    )


def evaluate_variant(model, data, labels, variant, *, tree=None, features=None, threshold=None):
    """Run one classifier variant over a dataset.

    ``variant`` is one of ``"fob"``, ``"baseline"``, ``"cdln"`` (needs
    ``threshold``) or ``"adaptive"`` (needs ``tree`` and ``features``).
    Returns ``(confusion_matrix, MetricSet, RoutingOutcome)``.
    """
    from . import engine

    routing = engine.route(model, data, variant, tree=tree, features=features, threshold=threshold)
    cm = confusion(labels, routing.predictions, model.num_classes)
    return cm, compute_metrics(cm), routing
