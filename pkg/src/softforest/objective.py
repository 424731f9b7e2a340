"""Losses and evaluation metrics binding predictions to targets.

regression  -> mean squared error, metric mse (F = 1)
binary      -> logistic loss on a single logit, metric error rate (F = 1)
multiclass  -> softmax cross-entropy on C logits, metric error rate (F = C)

The loss is always computed on the ensemble output, and the batch loss is
the mean of the per-sample losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BINARY, MULTICLASS, REGRESSION
from .forest import sigmoid


@dataclass(frozen=True)
class TaskBinding:
    """Task kind plus the implied loss/metric pairing and output width."""

    kind: str
    classes: int = 0

    def __post_init__(self):
        if self.kind not in (REGRESSION, BINARY, MULTICLASS):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == MULTICLASS and self.classes < 2:
            raise ValueError("multiclass binding needs classes >= 2")

    @classmethod
    def regression(cls) -> "TaskBinding":
        return cls(REGRESSION)

    @classmethod
    def binary(cls) -> "TaskBinding":
        return cls(BINARY)

    @classmethod
    def multiclass(cls, classes: int) -> "TaskBinding":
        return cls(MULTICLASS, classes)

    @property
    def response_dim(self) -> int:
        return self.classes if self.kind == MULTICLASS else 1

    @property
    def loss_name(self) -> str:
        return {REGRESSION: "mse", BINARY: "logloss", MULTICLASS: "cross_entropy"}[
            self.kind
        ]

    @property
    def metric_name(self) -> str:
        return "mse" if self.kind == REGRESSION else "error_rate"


def _check_shapes(pred: np.ndarray, targets: np.ndarray, binding: TaskBinding):
    if pred.ndim != 2 or pred.shape[1] != binding.response_dim:
        raise ValueError(
            f"predictions of shape {pred.shape} do not match response dim "
            f"{binding.response_dim}"
        )
    if len(targets) != pred.shape[0]:
        raise ValueError(f"{pred.shape[0]} predictions but {len(targets)} targets")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(
    pred: np.ndarray, targets: np.ndarray, binding: TaskBinding
) -> tuple[float, np.ndarray]:
    """Batch loss (mean) and the per-sample loss vector."""
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets)
    _check_shapes(pred, targets, binding)
    if binding.kind == REGRESSION:
        per_sample = (pred[:, 0] - targets) ** 2
    elif binding.kind == BINARY:
        signs = 2.0 * targets - 1.0  # {0,1} -> {-1,+1}
        per_sample = np.logaddexp(0.0, -signs * pred[:, 0])
    else:
        log_probs = _log_softmax(pred)
        per_sample = -log_probs[np.arange(len(targets)), targets.astype(np.int64)]
    return float(per_sample.mean()), per_sample


def loss_gradient(
    pred: np.ndarray, targets: np.ndarray, binding: TaskBinding
) -> np.ndarray:
    """d(mean batch loss)/d(pred), shape (B, F). Includes the 1/B factor."""
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets)
    _check_shapes(pred, targets, binding)
    n = pred.shape[0]
    if binding.kind == REGRESSION:
        return (2.0 / n) * (pred - targets[:, None])
    if binding.kind == BINARY:
        return (sigmoid(pred) - targets[:, None]) / n
    probs = np.exp(_log_softmax(pred))
    probs[np.arange(n), targets.astype(np.int64)] -= 1.0
    return probs / n


def metric(pred: np.ndarray, targets: np.ndarray, binding: TaskBinding) -> float:
    """Task metric: mse for regression, fraction misclassified otherwise.

    Binary predictions threshold the logit at 0; multiclass takes the
    argmax over the C logits.
    """
    pred = np.asarray(pred, dtype=np.float64)
    targets = np.asarray(targets)
    _check_shapes(pred, targets, binding)
    if binding.kind == REGRESSION:
        return float(np.mean((pred[:, 0] - targets) ** 2))
    if binding.kind == BINARY:
        labels = (pred[:, 0] > 0.0).astype(np.int64)
    else:
        labels = pred.argmax(axis=1)
    return float(np.mean(labels != targets.astype(np.int64)))
