"""Confusion matrices and per-class / macro F1."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=int), np.asarray(y_pred, dtype=int)), 1)
    return cm


def _ratio(num, den):
    # 0/0 -> 0 by convention
    return np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den > 0)


@dataclass
class EvalReport:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    confusion: np.ndarray
    crop_policy: str = "full_utterance"
    labels: tuple = ()

    @property
    def macro_f1(self) -> float:
        return float(np.mean(self.f1))

    @property
    def n_utterances(self) -> int:
        return int(self.confusion.sum())

    def records(self) -> list[dict]:
        names = self.labels or tuple(str(i) for i in range(len(self.f1)))
        rows = [{"class": n, "precision": f"{p:.6f}", "recall": f"{r:.6f}", "f1": f"{f:.6f}"}
                for n, p, r, f in zip(names, self.precision, self.recall, self.f1)]
        rows.append({"class": "macro", "f1": f"{self.macro_f1:.6f}",
                     "n_utterances": str(self.n_utterances), "crop_policy": self.crop_policy,
                     "averaging": "macro", "zero_division": "0"})
        return rows

    def format(self) -> str:
        names = self.labels or tuple(str(i) for i in range(len(self.f1)))
        width = max(8, *(len(n) for n in names))
        out = [f"{'Class':<{width}}  Precision  Recall  F1-Score (%)"]
        for n, p, r, f in zip(names, self.precision, self.recall, self.f1):
            out.append(f"{n:<{width}}  {p:9.4f}  {r:6.4f}  {100 * f:12.2f}")
        out.append(f"{'macro':<{width}}  {'':9}  {'':6}  {100 * self.macro_f1:12.2f}")
        out.append(f"(macro-averaged F1, 0/0 -> 0; {self.n_utterances} utterances; {self.crop_policy})")
        return "\n".join(out)


def compute_f1(confusion, crop_policy="full_utterance", labels=()) -> EvalReport:
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.sum() < 1:
        raise ValueError("confusion matrix must be square with total count >= 1")
    tp = np.diag(cm)
    precision = _ratio(tp, cm.sum(axis=0))
    recall = _ratio(tp, cm.sum(axis=1))
    f1 = _ratio(2 * precision * recall, precision + recall)
    return EvalReport(precision, recall, f1, np.asarray(confusion), crop_policy, tuple(labels))


def macro_f1(y_true, y_pred, n_classes: int) -> float:
    return compute_f1(confusion_matrix(y_true, y_pred, n_classes)).macro_f1
