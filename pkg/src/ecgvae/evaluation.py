"""Multi-label evaluation: confusion counts and every reported aggregate.

All functions are pure and operate on (samples, 5) arrays. Precision,
recall, and F1 use the zero-division convention of returning 0 when the
denominator is empty. "Precision"/"recall" without qualifier are reported
both micro-averaged (pooled counts) and macro-averaged (unweighted class
mean), labelled unambiguously.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import CLASS_NAMES, NUM_CLASSES
from .errors import ShapeMismatch


@dataclass(frozen=True)
class ConfusionCounts:
    """Per-class binary confusion counts over one evaluated batch."""

    tn: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tp: np.ndarray

    @property
    def n_samples(self) -> int:
        return int(self.tn[0] + self.fp[0] + self.fn[0] + self.tp[0])

    def to_csv(self) -> str:
        lines = ["class,tn,fp,fn,tp"]
        for i, name in enumerate(CLASS_NAMES):
            lines.append(f"{name},{self.tn[i]},{self.fp[i]},{self.fn[i]},{self.tp[i]}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PerClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray

    def to_csv(self) -> str:
        lines = ["class,precision,recall,f1,support"]
        for i, name in enumerate(CLASS_NAMES):
            lines.append(f"{name},{self.precision[i]!r},{self.recall[i]!r},"
                         f"{self.f1[i]!r},{self.support[i]}")
        return "\n".join(lines) + "\n"


def binarize(probabilities: np.ndarray, threshold: float) -> np.ndarray:
    """Predict positive iff probability >= threshold (boundary inclusive)."""
    return (np.asarray(probabilities) >= threshold).astype(np.uint8)


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred shape {pred.shape} != truth shape {truth.shape}")
    pred = pred.astype(bool)
    truth = truth.astype(bool)
    return ConfusionCounts(
        tn=np.sum(~pred & ~truth, axis=0).astype(np.int64),
        fp=np.sum(pred & ~truth, axis=0).astype(np.int64),
        fn=np.sum(~pred & truth, axis=0).astype(np.int64),
        tp=np.sum(pred & truth, axis=0).astype(np.int64),
    )


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den > 0)
    return out


def per_class_metrics(c: ConfusionCounts) -> PerClassMetrics:
    precision = _safe_div(c.tp, c.tp + c.fp)
    recall = _safe_div(c.tp, c.tp + c.fn)
    f1 = _safe_div(2.0 * precision * recall, precision + recall)
    return PerClassMetrics(precision=precision, recall=recall, f1=f1,
                           support=(c.tp + c.fn).astype(np.int64))


def aggregate_metrics(c: ConfusionCounts, per_class: PerClassMetrics) -> dict:
    """Micro, macro, weighted, and element-wise aggregates from pooled counts."""
    tp, fp, fn = c.tp.sum(), c.fp.sum(), c.fn.sum()
    support = per_class.support.astype(np.float64)
    total_support = support.sum()
    n_elements = c.n_samples * NUM_CLASSES
    hamming = float((fp + fn) / n_elements) if n_elements else 0.0

    def weighted(values):
        return float((values * support).sum() / total_support) if total_support else 0.0

    return {
        "micro_precision": float(_safe_div(tp, tp + fp)),
        "micro_recall": float(_safe_div(tp, tp + fn)),
        "macro_precision": float(per_class.precision.mean()),
        "macro_recall": float(per_class.recall.mean()),
        "weighted_precision": weighted(per_class.precision),
        "weighted_recall": weighted(per_class.recall),
        "weighted_f1": weighted(per_class.f1),
        "hamming_loss": hamming,
        "binary_accuracy": 1.0 - hamming,
    }


def subset_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of samples whose entire label vector is exactly right."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred shape {pred.shape} != truth shape {truth.shape}")
    if pred.shape[0] == 0:
        return 0.0
    return float(np.all(pred == truth, axis=1).mean())


def _rank_auc(scores: np.ndarray, labels: np.ndarray) -> float | None:
    """AUC as the Mann-Whitney statistic, ties counted half, via average ranks."""
    labels = labels.astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    first_rank = np.cumsum(counts) - counts + 1
    avg_rank = first_rank + (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(scores: np.ndarray, truth: np.ndarray
            ) -> tuple[np.ndarray, float, list[str]]:
    """Per-class AUC plus the macro mean over classes where AUC is defined.

    Classes lacking either a positive or a negative example get NaN and are
    listed in the returned ``undefined`` names.
    """
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape:
        raise ShapeMismatch(f"scores shape {scores.shape} != truth shape {truth.shape}")
    per_class = np.full(truth.shape[1], np.nan)
    undefined = []
    for j in range(truth.shape[1]):
        auc = _rank_auc(scores[:, j], truth[:, j])
        if auc is None:
            undefined.append(CLASS_NAMES[j] if j < len(CLASS_NAMES) else str(j))
        else:
            per_class[j] = auc
    defined = per_class[~np.isnan(per_class)]
    macro = float(defined.mean()) if defined.size else float("nan")
    return per_class, macro, undefined


@dataclass(frozen=True)
class EvaluationReport:
    """Everything the evaluation emits for one scored test set."""

    confusion: ConfusionCounts
    per_class: PerClassMetrics
    aggregates: dict
    subset_accuracy: float
    per_class_auc: np.ndarray
    macro_auc: float
    auc_undefined: list
    threshold: float
    test_loss: float | None = None

    def to_json(self) -> str:
        per_class_block = {}
        for i, name in enumerate(CLASS_NAMES):
            auc = self.per_class_auc[i]
            per_class_block[name] = {
                "tn": int(self.confusion.tn[i]),
                "fp": int(self.confusion.fp[i]),
                "fn": int(self.confusion.fn[i]),
                "tp": int(self.confusion.tp[i]),
                "precision": float(self.per_class.precision[i]),
                "recall": float(self.per_class.recall[i]),
                "f1": float(self.per_class.f1[i]),
                "support": int(self.per_class.support[i]),
                "auc": None if np.isnan(auc) else float(auc),
            }
        payload = {
            "n_samples": self.confusion.n_samples,
            "threshold": self.threshold,
            **self.aggregates,
            "subset_accuracy": self.subset_accuracy,
            "macro_auc": None if np.isnan(self.macro_auc) else self.macro_auc,
            "auc_undefined_classes": list(self.auc_undefined),
            "test_loss": self.test_loss,
            "per_class": per_class_block,
        }
        return json.dumps(payload, indent=2)


def build_report(probabilities: np.ndarray, truth: np.ndarray,
                 threshold: float = 0.5,
                 test_loss: float | None = None) -> EvaluationReport:
    """Score one batch of probabilities against multi-hot truth."""
    pred = binarize(probabilities, threshold)
    counts = confusion(pred, truth)
    per_class = per_class_metrics(counts)
    per_class_auc, macro_auc, undefined = roc_auc(probabilities, truth)
    return EvaluationReport(
        confusion=counts,
        per_class=per_class,
        aggregates=aggregate_metrics(counts, per_class),
        subset_accuracy=subset_accuracy(pred, truth),
        per_class_auc=per_class_auc,
        macro_auc=macro_auc,
        auc_undefined=undefined,
        threshold=threshold,
        test_loss=test_loss,
    )
