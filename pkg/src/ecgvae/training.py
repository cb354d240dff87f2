"""Weighted binary cross-entropy, Adam, and the callback-driven training loop.

The loop mirrors the usual val-loss machinery: learning rate halves after
``plateau_patience`` epochs without improvement, training stops after
``early_stop_patience``, and the returned model is a snapshot of the epoch
with the lowest validation loss. Everything is deterministic under a fixed
seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import evaluation
from .errors import (
    EmptyTrainSet,
    InvalidConfig,
    MalformedInput,
    NonFiniteInput,
    NonFiniteLoss,
    ShapeMismatch,
)
from .model import Model
from .preprocess import validation_split

# log-stability clamp for predictions inside the loss
PRED_CLAMP = 1e-7
# a validation loss must drop by more than this to count as improvement
MIN_DELTA = 1e-9

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8

HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "train_acc",
                   "val_loss", "val_acc", "val_precision", "val_recall")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 50
    validation_fraction: float = 0.20
    early_stop_patience: int = 10
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    min_lr: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.plateau_factor < 1.0:
            raise InvalidConfig(f"plateau_factor {self.plateau_factor} outside (0, 1)")
        if self.min_lr <= 0 or self.learning_rate <= 0:
            raise InvalidConfig("learning rates must be positive")
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise InvalidConfig("patience values must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise InvalidConfig(
                f"validation_fraction {self.validation_fraction} outside (0, 1)"
            )
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfig("batch_size and max_epochs must be >= 1")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    val_precision: float
    val_recall: float


def weighted_bce(predictions: np.ndarray, targets: np.ndarray,
                 sample_weights: np.ndarray) -> tuple[float, np.ndarray]:
    """Sample-weighted binary cross-entropy and its gradient.

    loss = -(1/N) sum_i w_i sum_j [y log p + (1-y) log(1-p)], predictions
    clamped to [PRED_CLAMP, 1-PRED_CLAMP] for log stability. The gradient is
    zero where the clamp is active.
    """
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    w = np.asarray(sample_weights, dtype=np.float64)
    if p.shape != y.shape or w.shape != (p.shape[0],):
        raise ShapeMismatch(
            f"predictions {p.shape}, targets {y.shape}, weights {w.shape}"
        )
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(y))
            and np.all(np.isfinite(w))):
        raise NonFiniteInput("weighted_bce received non-finite values")
    n = p.shape[0]
    pc = np.clip(p, PRED_CLAMP, 1.0 - PRED_CLAMP)
    ce = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    loss = float((w * ce.sum(axis=1)).sum() / n)
    grad = (w[:, None] / n) * (-y / pc + (1.0 - y) / (1.0 - pc))
    grad[(p < PRED_CLAMP) | (p > 1.0 - PRED_CLAMP)] = 0.0
    return loss, grad


class Adam:
    """Bias-corrected Adam over a model's trainable blocks."""

    def __init__(self, model: Model, lr: float,
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
                 epsilon: float = ADAM_EPSILON):
        self.model = model
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [{name: np.zeros_like(p) for name, p in layer.params.items()}
                  for layer in model.all_layers()]
        self.v = [{name: np.zeros_like(p) for name, p in layer.params.items()}
                  for layer in model.all_layers()]

    def step(self) -> None:
        """Apply one update from the gradients currently stored on the layers."""
        self.t += 1
        for layer, m, v in zip(self.model.all_layers(), self.m, self.v):
            for name, param in layer.params.items():
                grad = layer.grads[name]
                if grad.shape != param.shape:
                    raise ShapeMismatch(
                        f"gradient shape {grad.shape} != parameter {param.shape}"
                    )
                _adam_update(param, grad, m[name], v[name], self.t,
                             self.lr, self.beta1, self.beta2, self.epsilon)
        self.model.bump_version()


def _adam_update(param, grad, m, v, t, lr, beta1, beta2, epsilon):
    m[...] = beta1 * m + (1.0 - beta1) * grad
    v[...] = beta2 * v + (1.0 - beta2) * grad ** 2
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + epsilon)


class EarlyStopping:
    """Stop when validation loss has not improved for ``patience`` epochs."""

    def __init__(self, patience: int, min_delta: float = MIN_DELTA):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.wait = 0

    def update(self, val_loss: float) -> bool:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


class ReduceLROnPlateau:
    """Halve the learning rate after ``patience`` epochs without improvement."""

    def __init__(self, patience: int, factor: float, min_lr: float,
                 min_delta: float = MIN_DELTA):
        self.patience = patience
        self.factor = factor
        self.min_lr = min_lr
        self.min_delta = min_delta
        self.best = np.inf
        self.wait = 0

    def update(self, val_loss: float, lr: float) -> float:
        """Return the (possibly reduced) learning rate for the next epoch."""
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.wait = 0
            return lr
        self.wait += 1
        if self.wait >= self.patience:
            self.wait = 0
            return max(lr * self.factor, self.min_lr)
        return lr


@dataclass
class TrainResult:
    best_model: Model
    final_model: Model
    history: list
    best_epoch: int
    best_val_loss: float
    stopped_early: bool
    epochs_run: int
    lr_reductions: list = field(default_factory=list)   # (epoch, new_lr)


def _epoch_metrics(probs: np.ndarray, targets: np.ndarray) -> tuple[float, float, float]:
    """Binary accuracy plus micro precision/recall at threshold 0.5."""
    pred = evaluation.binarize(probs, 0.5)
    counts = evaluation.confusion(pred, targets)
    agg = evaluation.aggregate_metrics(counts, evaluation.per_class_metrics(counts))
    return agg["binary_accuracy"], agg["micro_precision"], agg["micro_recall"]


def predict_in_batches(model: Model, signals: np.ndarray,
                       batch_size: int = 256) -> np.ndarray:
    """Inference-mode forward over a whole set, chunked to bound memory."""
    outputs = []
    for start in range(0, signals.shape[0], batch_size):
        probs, _ = model.forward(signals[start:start + batch_size], training=False)
        outputs.append(probs)
    return np.concatenate(outputs) if outputs else np.zeros((0, model.config.n_classes))


def train(model: Model, signals: np.ndarray, labels: np.ndarray,
          sample_weights: np.ndarray, config: TrainConfig) -> TrainResult:
    """Run the full weighted training loop on an already-balanced set.

    ``signals`` is the normalized balanced training block; a validation
    slice is carved out internally per ``config.validation_fraction``.
    """
    signals = np.asarray(signals, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    sample_weights = np.asarray(sample_weights, dtype=np.float64)
    n_rows = signals.shape[0]
    if n_rows == 0:
        raise EmptyTrainSet("training set is empty")

    train_pos, val_pos = validation_split(n_rows, config.validation_fraction,
                                          config.seed)
    if config.batch_size > train_pos.size:
        raise EmptyTrainSet(
            f"batch size {config.batch_size} exceeds train rows {train_pos.size}"
        )
    x_val = signals[val_pos]
    y_val = labels[val_pos]
    w_val = sample_weights[val_pos]

    model.seed_dropout(config.seed)
    shuffle_rng = np.random.default_rng(config.seed + 1)
    optimizer = Adam(model, lr=config.learning_rate)
    early_stop = EarlyStopping(config.early_stop_patience)
    plateau = ReduceLROnPlateau(config.plateau_patience, config.plateau_factor,
                                config.min_lr)

    history: list[EpochLog] = []
    lr_reductions: list[tuple[int, float]] = []
    best_model = model.copy()
    best_val_loss = np.inf
    best_epoch = 0
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        order = train_pos[shuffle_rng.permutation(train_pos.size)]
        loss_sum = 0.0
        train_probs = np.empty((train_pos.size, labels.shape[1]))
        train_targets = np.empty_like(train_probs)
        filled = 0
        for start in range(0, order.size, config.batch_size):
            batch_idx = order[start:start + config.batch_size]
            probs, cache = model.forward(signals[batch_idx], training=True)
            loss, grad = weighted_bce(probs, labels[batch_idx],
                                      sample_weights[batch_idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"non-finite training loss at epoch {epoch}",
                                    epoch=epoch)
            model.backward(cache, grad)
            optimizer.step()
            loss_sum += loss * batch_idx.size
            train_probs[filled:filled + batch_idx.size] = probs
            train_targets[filled:filled + batch_idx.size] = labels[batch_idx]
            filled += batch_idx.size

        train_loss = loss_sum / train_pos.size
        train_acc, _, _ = _epoch_metrics(train_probs, train_targets)

        val_probs = predict_in_batches(model, x_val, config.batch_size)
        val_loss, _ = weighted_bce(val_probs, y_val, w_val)
        if not np.isfinite(val_loss):
            raise NonFiniteLoss(f"non-finite validation loss at epoch {epoch}",
                                epoch=epoch)
        val_acc, val_precision, val_recall = _epoch_metrics(val_probs, y_val)

        history.append(EpochLog(epoch, optimizer.lr, train_loss, train_acc,
                                val_loss, val_acc, val_precision, val_recall))

        if val_loss < best_val_loss:
            best_val_loss = val_loss
            best_epoch = epoch
            best_model = model.copy()

        new_lr = plateau.update(val_loss, optimizer.lr)
        if new_lr != optimizer.lr:
            lr_reductions.append((epoch, new_lr))
            optimizer.lr = new_lr
        if early_stop.update(val_loss):
            stopped_early = True
            break

    return TrainResult(
        best_model=best_model,
        final_model=model,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=float(best_val_loss),
        stopped_early=stopped_early,
        epochs_run=len(history),
        lr_reductions=lr_reductions,
    )


def history_to_csv(history) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for log in history:
        lines.append(f"{log.epoch},{log.lr!r},{log.train_loss!r},{log.train_acc!r},"
                     f"{log.val_loss!r},{log.val_acc!r},{log.val_precision!r},"
                     f"{log.val_recall!r}")
    return "\n".join(lines) + "\n"


def history_from_csv(text: str) -> list[EpochLog]:
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != ",".join(HISTORY_COLUMNS):
        raise MalformedInput("history CSV header mismatch")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        if len(parts) != len(HISTORY_COLUMNS):
            raise MalformedInput(f"history CSV row has {len(parts)} fields: {line!r}")
        try:
            out.append(EpochLog(int(parts[0]), *(float(p) for p in parts[1:])))
        except ValueError as exc:
            raise MalformedInput(f"history CSV row unparseable: {line!r}") from exc
    return out
