"""Differentiable decision forest for tabular data with tree attention.

An ensemble of soft decision trees routes every sample to all leaves with
sigmoid-gated probabilities, a squeeze/regulate attention block learns
per-tree weights, and the whole model trains end to end by mini-batch
gradient descent with hand-derived reverse-mode gradients (verified
against central finite differences).
"""

from .attention import (
    AttentionParameters,
    attended_prediction,
    init_attention,
    regulate,
    squeeze,
)
from .backward import GradientBuffer, backward_pass, finite_difference_check
from .data import (
    Batch,
    DataMatrix,
    DatasetSchema,
    Standardizer,
    apply_standardizer,
    batches,
    fit_standardizer,
    load_csv,
    split,
)
from .errors import DataError, ModelFormatError, SoftForestError, TrainingDiverged
from .forest import (
    ForestParameters,
    ForwardTrace,
    TreeParameters,
    ensemble_average,
    forest_responses,
    gating_values,
    init_forest,
    leaf_probabilities,
    tree_response,
)
from .model import init_model, model_forward, parameter_count, parameter_dict
from .model_io import LoadedModel, load_model, save_model
from .objective import TaskBinding, loss, loss_gradient, metric
from .optim import OptimizerState, step
from .trainer import TrainConfig, TrainReport, TrainResult, evaluate, predict_rows, train

__version__ = "0.1.0"

__all__ = [
    "AttentionParameters",
    "Batch",
    "DataError",
    "DataMatrix",
    "DatasetSchema",
    "ForestParameters",
    "ForwardTrace",
    "GradientBuffer",
    "LoadedModel",
    "ModelFormatError",
    "OptimizerState",
    "SoftForestError",
    "Standardizer",
    "TaskBinding",
    "TrainConfig",
    "TrainReport",
    "TrainResult",
    "TrainingDiverged",
    "TreeParameters",
    "apply_standardizer",
    "attended_prediction",
    "backward_pass",
    "batches",
    "ensemble_average",
    "evaluate",
    "finite_difference_check",
    "fit_standardizer",
    "forest_responses",
    "gating_values",
    "init_attention",
    "init_forest",
    "init_model",
    "leaf_probabilities",
    "load_csv",
    "load_model",
    "loss",
    "loss_gradient",
    "metric",
    "model_forward",
    "parameter_count",
    "parameter_dict",
    "predict_rows",
    "regulate",
    "save_model",
    "split",
    "squeeze",
    "step",
    "train",
    "tree_response",
]
