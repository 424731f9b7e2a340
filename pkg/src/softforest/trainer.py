"""Mini-batch training loop: epochs, validation early stopping, evaluation.

Per batch: forward (gating, leaf probabilities, tree responses, attention
weights, ensemble output), loss, backward, optimizer step. After each
epoch the validation metric decides whether to snapshot the parameters;
training stops after ``patience`` epochs without improvement and the best
snapshot is restored.

Peak per-batch memory depends only on (batch size, trees, depth, features,
response width), never on the training-set size; the report records the
measured buffer sizes so this can be asserted.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attention import GATE_KINDS, GATE_SIGMOID, AttentionParameters
from .backward import backward_pass
from .data import DataMatrix, batches, eval_batches
from .errors import TrainingDiverged
from .forest import ForestParameters
from .model import init_model, model_forward, parameter_count, parameter_dict
from .objective import TaskBinding, loss, metric
from .optim import OPTIMIZER_KINDS, QHADAM, OptimizerState, step


@dataclass
class TrainConfig:
    """All training hyperparameters, with the library defaults."""

    num_trees: int = 1024
    depth: int = 5
    batch_size: int = 512
    learning_rate: float = 0.002
    optimizer: str = QHADAM
    attention: str = GATE_SIGMOID  # gate kind: off | sigmoid | softmax
    reduction: int = 16
    max_epochs: int = 256
    patience: int = 16
    seed: int = 42
    deterministic: bool = True
    weight_decay: float = 0.0

    def __post_init__(self):
        if min(self.num_trees, self.depth, self.batch_size, self.reduction) < 1:
            raise ValueError("num_trees, depth, batch_size, reduction must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be >= 0")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.attention not in GATE_KINDS:
            raise ValueError(f"unknown attention gate {self.attention!r}")


@dataclass
class TrainReport:
    """Per-epoch history and final evaluation of the best snapshot."""

    train_losses: list[float] = field(default_factory=list)
    val_metrics: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = -1
    test_metric: float = float("nan")
    parameter_count: int = 0
    model_bytes: int = 0  # parameters + optimizer moments
    batch_buffer_bytes: int = 0  # peak per-batch buffers (trace, grads, batch)

    @property
    def best_val_metric(self) -> float:
        if self.best_epoch < 0:
            return float("nan")
        return self.val_metrics[self.best_epoch]


@dataclass
class TrainResult:
    forest: ForestParameters
    attention: AttentionParameters
    report: TrainReport


def predict_rows(
    forest: ForestParameters,
    attention: AttentionParameters,
    rows: np.ndarray,
    batch_size: int = 512,
) -> np.ndarray:
    """Model outputs for feature rows, streamed in evaluation-size chunks."""
    rows = np.asarray(rows, dtype=np.float64)
    chunks = []
    for start in range(0, len(rows), batch_size):
        pred, _ = model_forward(forest, attention, rows[start : start + batch_size])
        chunks.append(pred)
    return np.concatenate(chunks, axis=0)


def evaluate(
    forest: ForestParameters,
    attention: AttentionParameters,
    data: DataMatrix,
    binding: TaskBinding,
    batch_size: int = 512,
) -> float:
    """Task metric over all rows, streaming without shuffling.

    Predictions are concatenated before the metric is taken once, so the
    result does not depend on the evaluation batch size.
    """
    if data.feature_count != forest.num_features:
        raise ValueError(
            f"data has {data.feature_count} features, model expects "
            f"{forest.num_features}"
        )
    preds = []
    for batch in eval_batches(data, batch_size):
        pred, _ = model_forward(forest, attention, batch.rows)
        preds.append(pred)
    return metric(np.concatenate(preds, axis=0), data.targets, binding)


def train(
    config: TrainConfig,
    train_data: DataMatrix,
    val_data: DataMatrix,
    test_data: DataMatrix,
    binding: TaskBinding,
    init: tuple[ForestParameters, AttentionParameters] | None = None,
    verbose: bool = True,
) -> TrainResult:
    """Run the full training loop and evaluate the best snapshot on test.

    ``init`` overrides the seeded parameter initialization (the arrays are
    copied first); it exists for experiments that pre-arrange the forest,
    e.g. deliberately corrupted trees.
    """
    for name, part in (("train", train_data), ("val", val_data), ("test", test_data)):
        if part.n_rows == 0:
            raise ValueError(f"{name} split is empty")
        if part.feature_count != train_data.feature_count:
            raise ValueError(f"{name} split has a different feature width")

    if init is None:
        forest, attention = init_model(
            num_trees=config.num_trees,
            depth=config.depth,
            num_features=train_data.feature_count,
            response_dim=binding.response_dim,
            reduction=config.reduction,
            gate_kind=config.attention,
            seed=config.seed,
        )
    else:
        forest, attention = init[0].copy(), init[1].copy()

    params = parameter_dict(forest, attention)
    state = OptimizerState(
        kind=config.optimizer,
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
    )
    report = TrainReport(parameter_count=parameter_count(forest, attention))

    best_val = float("inf")
    best_snapshot = (forest.copy(), attention.copy())
    n_train = train_data.n_rows

    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        loss_sum = 0.0
        for batch_index, batch in enumerate(
            batches(train_data, config.batch_size, config.seed, epoch)
        ):
            pred, trace = model_forward(forest, attention, batch.rows)
            batch_loss, _ = loss(pred, batch.targets, binding)
            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch, batch_index, batch_loss)
            grads = backward_pass(trace, batch, forest, attention, binding)
            step(params, grads.as_dict(), state)
            loss_sum += batch_loss * batch.size
            buffer_bytes = (
                trace.nbytes + grads.nbytes + batch.rows.nbytes + batch.targets.nbytes
            )
            if buffer_bytes > report.batch_buffer_bytes:
                report.batch_buffer_bytes = buffer_bytes
        train_loss = loss_sum / n_train
        val_metric = evaluate(forest, attention, val_data, binding, config.batch_size)
        elapsed = time.perf_counter() - started
        report.train_losses.append(train_loss)
        report.val_metrics.append(val_metric)
        report.epoch_seconds.append(elapsed)
        if verbose:
            print(
                f"epoch {epoch} train_loss {train_loss:.6g} "
                f"val {val_metric:.6g} {elapsed:.2f}s"
            )
        if val_metric < best_val:
            best_val = val_metric
            best_snapshot = (forest.copy(), attention.copy())
            report.best_epoch = epoch
        elif epoch - report.best_epoch >= config.patience:
            break

    forest, attention = best_snapshot
    report.model_bytes = forest.nbytes + attention.nbytes + state.nbytes
    report.test_metric = evaluate(
        forest, attention, test_data, binding, config.batch_size
    )
    return TrainResult(forest=forest, attention=attention, report=report)
