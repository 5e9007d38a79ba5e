"""Example-based and label-based precision / recall and the F2 score.

Edge conventions:

* example with no true and no predicted labels: p = r = F2 = 1
* example with no predicted labels but some true ones: p = r = F2 = 0
* example with predictions but no true labels: p = 0, r = 1, F2 = 0
* label-based means skip classes with no positive ground truth
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, UsageError

BETA = 2.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int


def _binary(x, what: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise DimensionError(f"{what} must be binary")
    return arr.astype(bool)


def counts(pred, truth) -> ConfusionCounts:
    pred, truth = _binary(pred, "prediction"), _binary(truth, "truth")
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction {pred.shape} vs truth {truth.shape}")
    return ConfusionCounts(int((pred & truth).sum()), int((pred & ~truth).sum()),
                           int((~pred & truth).sum()))


def f_beta(p: float, r: float, beta: float = BETA) -> float:
    b2 = beta * beta
    denom = b2 * p + r
    return 0.0 if denom == 0 else (1 + b2) * p * r / denom


def example_prf2(pred, truth) -> tuple[float, float, float]:
    """``(p_e, r_e, F2)`` for one example."""
    c = counts(pred, truth)
    if c.tp + c.fp == 0:
        return (1.0, 1.0, 1.0) if c.fn == 0 else (0.0, 0.0, 0.0)
    p = c.tp / (c.tp + c.fp)
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    return p, r, f_beta(p, r)


def mean_example_metrics(preds, truths) -> tuple[float, float, float]:
    """Mean F2, mean example precision and mean example recall."""
    preds, truths = np.asarray(preds), np.asarray(truths)
    if len(preds) == 0:
        raise UsageError("no examples to score")
    if preds.shape != truths.shape:
        raise DimensionError(f"predictions {preds.shape} vs truths {truths.shape}")
    scores = np.array([example_prf2(p, t) for p, t in zip(preds, truths)])
    return float(scores[:, 2].mean()), float(scores[:, 0].mean()), float(scores[:, 1].mean())


@dataclass
class LabelReport:
    precision: np.ndarray  # per class, NaN where undefined
    recall: np.ndarray
    counts: list[ConfusionCounts]
    mean_precision: float
    mean_recall: float


def label_prf(preds, truths) -> LabelReport:
    preds, truths = _binary(preds, "predictions"), _binary(truths, "truths")
    if preds.ndim != 2 or len(preds) == 0:
        raise UsageError("label metrics need a nonempty 2-D prediction matrix")
    if preds.shape != truths.shape:
        raise DimensionError(f"predictions {preds.shape} vs truths {truths.shape}")
    tp = (preds & truths).sum(axis=0)
    fp = (preds & ~truths).sum(axis=0)
    fn = (~preds & truths).sum(axis=0)
    present = (tp + fn) > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        rec = np.where(present, tp / np.maximum(tp + fn, 1), np.nan)
    prec = np.where(present, prec, np.nan)
    mp = float(prec[present].mean()) if present.any() else float("nan")
    mr = float(rec[present].mean()) if present.any() else float("nan")
    cc = [ConfusionCounts(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)]
    return LabelReport(prec, rec, cc, mp, mr)


@dataclass(frozen=True)
class Summary:
    mean_f2: float
    pe: float
    re: float
    pc: float
    rc: float

    def csv_line(self) -> str:
        """F2 as a fraction, precision/recall as percentages."""
        return (f"{self.mean_f2:.4f},{100 * self.pe:.2f},{100 * self.re:.2f},"
                f"{100 * self.pc:.2f},{100 * self.rc:.2f}")


def evaluate(probs, truths, threshold: float = 0.5) -> tuple[Summary, LabelReport]:
    """Binarize ``probs >= threshold`` and compute every table column."""
    preds = (np.asarray(probs) >= threshold).astype(int)
    truths = np.asarray(truths).astype(int)
    f2, pe, re = mean_example_metrics(preds, truths)
    lab = label_prf(preds, truths)
    return Summary(f2, pe, re, lab.mean_precision, lab.mean_recall), lab
