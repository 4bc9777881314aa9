"""Confusion counts and accuracy / precision / recall / F1."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class.

    Class 0 is normal; in the binary case class 1 is the positive (anomalous) class.
    """

    matrix: np.ndarray

    @classmethod
    def from_predictions(cls, y_true, y_pred, classes: int) -> "ConfusionMatrix":
        y_true = np.asarray(y_true, dtype=np.int64)
        y_pred = np.asarray(y_pred, dtype=np.int64)
        m = np.zeros((classes, classes), dtype=np.int64)
        np.add.at(m, (y_true, y_pred), 1)
        return cls(m)

    @property
    def classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def one_vs_rest(self, c: int) -> tuple[int, int, int, int]:
        """(TP, FN, FP, TN) treating class ``c`` as positive."""
        m = self.matrix
        tp = int(m[c, c])
        fn = int(m[c].sum() - tp)
        fp = int(m[:, c].sum() - tp)
        tn = self.total - tp - fn - fp
        return tp, fn, fp, tn

    @property
    def tp(self) -> int:
        return self.one_vs_rest(1)[0]

    @property
    def fn(self) -> int:
        return self.one_vs_rest(1)[1]

    @property
    def fp(self) -> int:
        return self.one_vs_rest(1)[2]

    @property
    def tn(self) -> int:
        return self.one_vs_rest(1)[3]

    def collapse(self) -> "ConfusionMatrix":
        """Merge every anomaly class into one positive class."""
        m = self.matrix
        out = np.array([[m[0, 0], m[0, 1:].sum()], [m[1:, 0].sum(), m[1:, 1:].sum()]], dtype=np.int64)
        return ConfusionMatrix(out)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> dict[str, float]:
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    return {
        "accuracy": _ratio(tp + tn, tp + tn + fp + fn),
        "precision": precision,
        "recall": recall,
        "f1": _ratio(2 * precision * recall, precision + recall),
    }


def metrics(cm: ConfusionMatrix) -> dict[str, float]:
    """Binary metrics for two classes, macro averages (accuracy overall) otherwise."""
    if cm.classes == 2:
        tp, fn, fp, tn = cm.one_vs_rest(1)
        return metrics_from_counts(tp, fp, fn, tn)
    per = [metrics_from_counts(tp, fp, fn, tn)
           for tp, fn, fp, tn in (cm.one_vs_rest(c) for c in range(cm.classes))]
    return {
        "accuracy": _ratio(np.trace(cm.matrix), cm.total),
        "precision": float(np.mean([p["precision"] for p in per])),
        "recall": float(np.mean([p["recall"] for p in per])),
        "f1": float(np.mean([p["f1"] for p in per])),
    }


@dataclass
class EvalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    samples: int
    classes: int
    confusion: list[list[int]]
    per_event: dict[str, dict[str, float]] = field(default_factory=dict)
    config_hash: str = ""
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "samples": self.samples,
            "classes": self.classes,
            "confusion": self.confusion,
            "per_event": self.per_event,
            "config_hash": self.config_hash,
            "seed": self.seed,
        }


def build_report(y_true, y_pred, classes: int, events=None, config_hash: str = "",
                 seed: int = 0) -> tuple[ConfusionMatrix, EvalReport]:
    cm = ConfusionMatrix.from_predictions(y_true, y_pred, classes)
    m = metrics(cm)
    per_event = {}
    if events is not None:
        events = np.asarray(events)
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        for ev in np.unique(events):
            sel = events == ev
            per_event[str(int(ev))] = {
                "samples": int(sel.sum()),
                "accuracy": float(np.mean(y_true[sel] == y_pred[sel])),
                "flagged": float(np.mean(y_pred[sel] > 0)),
            }
    report = EvalReport(m["accuracy"], m["precision"], m["recall"], m["f1"], cm.total, classes,
                        cm.matrix.tolist(), per_event, config_hash, seed)
    return cm, report
