"""Full-model forward pass and parameter bookkeeping.

Glue between the forest, the attention block and everything that needs to
treat the learnable state as one object (backward pass, optimizer,
serialization).
"""

from __future__ import annotations

import numpy as np

from . import attention as attn_ops
from .attention import AttentionParameters, init_attention
from .forest import ForestParameters, ForwardTrace, ensemble_average, forest_responses, init_forest


def init_model(
    num_trees: int,
    depth: int,
    num_features: int,
    response_dim: int,
    reduction: int,
    gate_kind: str,
    seed: int,
) -> tuple[ForestParameters, AttentionParameters]:
    """Seeded initialization of the forest and the attention block."""
    rng = np.random.default_rng(seed)
    forest = init_forest(num_trees, depth, num_features, response_dim, rng)
    attention = init_attention(num_trees, reduction, gate_kind, rng)
    return forest, attention


def model_forward(
    forest: ForestParameters,
    attention: AttentionParameters,
    rows: np.ndarray,
) -> tuple[np.ndarray, ForwardTrace]:
    """Ensemble prediction for a batch, with the trace needed by backward.

    With the attention gate off the prediction is exactly the plain tree
    average; otherwise the per-sample tree weights come from the
    squeeze/regulate block and the weighted average keeps the same 1/K
    factor.
    """
    responses, trace = forest_responses(forest, rows)
    if attention.enabled:
        descriptors = attn_ops.squeeze(responses)
        weights, hidden_pre = attn_ops.regulate_with_trace(descriptors, attention)
        prediction = attn_ops.attended_prediction(responses, weights)
        trace.descriptors = descriptors
        trace.hidden_pre = hidden_pre
        trace.tree_weights = weights
    else:
        prediction = ensemble_average(responses)
    trace.prediction = prediction
    return prediction, trace


def parameter_dict(
    forest: ForestParameters, attention: AttentionParameters
) -> dict[str, np.ndarray]:
    """Live references to every learnable array, keyed by group name.

    Mutating the returned arrays in place updates the model; this is how
    the optimizer applies steps.
    """
    params = {
        "node_weights": forest.node_weights,
        "node_thresholds": forest.node_thresholds,
        "leaf_responses": forest.leaf_responses,
    }
    if attention.enabled:
        params["attention_reduce"] = attention.reduce_weights
        params["attention_expand"] = attention.expand_weights
    return params


def parameter_count(forest: ForestParameters, attention: AttentionParameters) -> int:
    return sum(a.size for a in parameter_dict(forest, attention).values())
