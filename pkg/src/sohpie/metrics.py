"""Scoring declared differentially connected taxa against ground truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def p(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricSummary:
    """Precision, recall, F1 and accuracy; NaN marks an undefined value."""

    precision: float
    recall: float
    f1: float
    accuracy: float

    @property
    def n_undefined(self) -> int:
        return sum(math.isnan(v) for v in (self.precision, self.recall, self.f1, self.accuracy))

    def as_dict(self) -> dict:
        return dict(precision=self.precision, recall=self.recall, f1=self.f1, accuracy=self.accuracy)


def confusion(eta, q, alpha: float = 0.05) -> ConfusionCounts:
    eta = np.asarray(eta).astype(bool)
    q = np.asarray(q, dtype=float)
    if eta.shape != q.shape:
        raise ValueError(f"length mismatch: {eta.shape} truth vs {q.shape} q-values")
    called = q < alpha
    return ConfusionCounts(
        tp=int(np.sum(eta & called)),
        fp=int(np.sum(~eta & called)),
        tn=int(np.sum(~eta & ~called)),
        fn=int(np.sum(eta & ~called)),
    )


def _ratio(a, b):
    return a / b if b else math.nan


def summarize(c: ConfusionCounts) -> MetricSummary:
    """Metrics from confusion counts; a zero denominator yields NaN."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    if math.isnan(precision) or math.isnan(recall):
        f1 = math.nan
    else:
        f1 = _ratio(2 * precision * recall, precision + recall)
    return MetricSummary(precision, recall, f1, _ratio(c.tp + c.tn, c.p))


def score(eta, q, alpha: float = 0.05) -> MetricSummary:
    return summarize(confusion(eta, q, alpha))


METRICS = ("precision", "recall", "f1", "accuracy")


def aggregate(summaries, undefined: str = "skip") -> dict:
    """Mean, sd and number of defined values for each metric across replicates.

    ``undefined='skip'`` leaves NaN replicates out of the mean;
    ``undefined='zero'`` counts them as 0.
    """
    if undefined not in ("skip", "zero"):
        raise ValueError("undefined must be 'skip' or 'zero'")
    out = {}
    for m in METRICS:
        vals = np.array([getattr(s, m) for s in summaries], dtype=float)
        bad = np.isnan(vals)
        if undefined == "zero":
            vals = np.where(bad, 0.0, vals)
            use = vals
        else:
            use = vals[~bad]
        out[m] = dict(
            mean=float(use.mean()) if use.size else math.nan,
            sd=float(use.std(ddof=1)) if use.size > 1 else math.nan,
            n_defined=int((~bad).sum()),
            n_undefined=int(bad.sum()),
        )
    return out
