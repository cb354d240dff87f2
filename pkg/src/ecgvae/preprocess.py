"""Split, balance, normalize, and weight the training data.

All operations are pure functions of their arguments; every random draw
comes from an RNG seeded inside the call, so results are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Corpus, DiagClass, NUM_CLASSES, NUM_LEADS
from .errors import (
    EmptyClass,
    EmptyTrainingSet,
    LeadCountMismatch,
    ZeroClassCount,
)

NORM_EPSILON = 1e-8

DEFAULT_BALANCE_TARGETS = {DiagClass.HYP: 4000, DiagClass.NORM: 4000}


@dataclass(frozen=True)
class NormStats:
    """Per-lead mean and population std, fitted on training data only."""

    mu: np.ndarray       # (12,)
    sigma: np.ndarray    # (12,)
    epsilon: float = NORM_EPSILON

    def to_json(self) -> str:
        return json.dumps(
            {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(),
             "epsilon": self.epsilon},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "NormStats":
        data = json.loads(text)
        return cls(
            mu=np.asarray(data["mu"], dtype=np.float64),
            sigma=np.asarray(data["sigma"], dtype=np.float64),
            epsilon=float(data["epsilon"]),
        )


@dataclass(frozen=True)
class BalanceSpec:
    """Target per-class sample counts for resampling; untargeted classes keep all rows."""

    targets: dict = field(default_factory=lambda: dict(DEFAULT_BALANCE_TARGETS))
    seed: int = 0

    def __post_init__(self):
        for cls, target in self.targets.items():
            if target < 1:
                raise EmptyClass(f"balance target for {DiagClass(cls).name} must be >= 1")


@dataclass(frozen=True)
class ClassWeights:
    """Inverse-frequency class weights with the HYP boost applied."""

    base: np.ndarray           # (5,)
    hyp_multiplier: float
    final: np.ndarray          # (5,)

    def to_json(self) -> str:
        return json.dumps(
            {"base": self.base.tolist(), "hyp_multiplier": self.hyp_multiplier,
             "final": self.final.tolist()},
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ClassWeights":
        data = json.loads(text)
        return cls(
            base=np.asarray(data["base"], dtype=np.float64),
            hyp_multiplier=float(data["hyp_multiplier"]),
            final=np.asarray(data["final"], dtype=np.float64),
        )


@dataclass(frozen=True)
class SplitSet:
    """Row indices for the three evaluation roles.

    ``train`` and ``validation`` index into the balanced set (duplicates
    allowed in train, from oversampling); ``test`` indexes the corpus and
    comes exclusively from fold 10.
    """

    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


def stratified_split(corpus: Corpus) -> tuple[np.ndarray, np.ndarray]:
    """Folds 1-9 become train rows, fold 10 test rows (original order kept)."""
    folds = corpus.folds()
    train = np.flatnonzero(folds <= 9)
    test = np.flatnonzero(folds == 10)
    return train, test


def balance(train_rows: np.ndarray, labels: np.ndarray,
            spec: BalanceSpec) -> np.ndarray:
    """Resample train rows per class toward the spec targets.

    For each class in canonical order, the rows positive for that class are
    sampled to the class target: with replacement when oversampling, without
    replacement when downsampling, kept as-is when no target applies (or the
    target equals the available count). The per-class lists are concatenated,
    so multi-label rows can appear once per class and oversampled rows repeat.
    """
    train_rows = np.asarray(train_rows, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    parts = []
    for cls in DiagClass:
        members = train_rows[labels[train_rows, cls] == 1]
        target = spec.targets.get(cls)
        if target is None or target == members.size:
            parts.append(members)
            continue
        if members.size == 0:
            raise EmptyClass(
                f"class {cls.name} has no members but a balance target of {target}"
            )
        chosen = rng.choice(members, size=target, replace=target > members.size)
        parts.append(chosen)
    return np.concatenate(parts) if parts else np.array([], dtype=np.int64)


def per_class_contributions(train_rows: np.ndarray, labels: np.ndarray,
                            spec: BalanceSpec) -> dict:
    """Per-class row counts before and after balancing (for prep summaries)."""
    train_rows = np.asarray(train_rows, dtype=np.int64)
    summary = {}
    for cls in DiagClass:
        available = int((labels[train_rows, cls] == 1).sum())
        target = spec.targets.get(cls)
        summary[cls.name] = {
            "before": available,
            "after": available if target is None else int(target),
        }
    return summary


def validation_split(n_rows: int, fraction: float, seed: int
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Split ``range(n_rows)`` into train/validation positions.

    The validation set is the last ``fraction`` of the rows after one seeded
    shuffle; the two position sets are disjoint.
    """
    if not 0 < fraction < 1:
        raise EmptyTrainingSet(f"validation fraction {fraction} outside (0, 1)")
    order = np.random.default_rng(seed).permutation(n_rows)
    n_val = int(n_rows * fraction)
    if n_val == 0 or n_val == n_rows:
        raise EmptyTrainingSet(
            f"validation split of {n_rows} rows at fraction {fraction} is degenerate"
        )
    return order[:-n_val], order[-n_val:]


def fit_norm_stats(train_signals: np.ndarray) -> NormStats:
    """Compute per-lead mean and population std over samples and time."""
    x = np.asarray(train_signals, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] == 0:
        raise EmptyTrainingSet(
            f"need a non-empty (n, time, leads) batch, got shape {x.shape}"
        )
    mu = x.mean(axis=(0, 1))
    sigma = x.std(axis=(0, 1))     # population std (divide by N)
    return NormStats(mu=mu, sigma=sigma)


def apply_norm(signals: np.ndarray, stats: NormStats) -> np.ndarray:
    """Z-score each lead: (x - mu) / (sigma + epsilon)."""
    x = np.asarray(signals, dtype=np.float64)
    if x.shape[-1] != stats.mu.shape[0]:
        raise LeadCountMismatch(
            f"batch has {x.shape[-1]} leads, stats have {stats.mu.shape[0]}"
        )
    return (x - stats.mu) / (stats.sigma + stats.epsilon)


def compute_class_weights(balanced_labels: np.ndarray,
                          hyp_multiplier: float = 1.5) -> ClassWeights:
    """Inverse-frequency weights over the balanced label matrix.

    w_j = n_total / (n_classes * n_j), then the HYP entry is scaled by
    ``hyp_multiplier``.
    """
    labels = np.asarray(balanced_labels)
    n_total = labels.shape[0]
    n_j = labels.sum(axis=0).astype(np.float64)
    if np.any(n_j == 0):
        empty = [DiagClass(i).name for i in np.flatnonzero(n_j == 0)]
        raise ZeroClassCount(f"class(es) with zero positives: {', '.join(empty)}")
    base = n_total / (NUM_CLASSES * n_j)
    final = base.copy()
    final[DiagClass.HYP] *= hyp_multiplier
    return ClassWeights(base=base, hyp_multiplier=hyp_multiplier, final=final)


def sample_weights(labels: np.ndarray, weights: ClassWeights) -> np.ndarray:
    """Per-row weight = mean of final class weights over the row's positive labels.

    Rows with no positive label get weight 1.0.
    """
    labels = np.asarray(labels, dtype=np.float64)
    positives = labels.sum(axis=1)
    weighted = labels @ weights.final
    out = np.ones(labels.shape[0], dtype=np.float64)
    has_pos = positives > 0
    out[has_pos] = weighted[has_pos] / positives[has_pos]
    return out
