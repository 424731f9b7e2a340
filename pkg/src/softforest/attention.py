"""Tree attention: squeeze per-tree responses, regulate, reweight the ensemble.

The block mirrors a squeeze-and-excitation layer applied across trees
instead of channels: each tree's response is pooled to a scalar
descriptor, a two-layer bottleneck (reduce to K/r, relu, expand back to K)
maps the descriptor vector to per-tree weights, and the weighted responses
are averaged with the same 1/K factor as the plain ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forest import sigmoid

GATE_SIGMOID = "sigmoid"
GATE_SOFTMAX = "softmax"
GATE_OFF = "off"

GATE_KINDS = (GATE_OFF, GATE_SIGMOID, GATE_SOFTMAX)


@dataclass
class AttentionParameters:
    """Bottleneck weights of the regulate stage (no bias terms).

    reduce_weights: (hidden, K) first fully connected layer
    expand_weights: (K, hidden) second fully connected layer

    hidden is K // r, clamped to 1 when r exceeds K. With gate_kind "off"
    both matrices are empty and the ensemble falls back to the plain
    average.
    """

    reduce_weights: np.ndarray
    expand_weights: np.ndarray
    reduction: int
    gate_kind: str

    @property
    def enabled(self) -> bool:
        return self.gate_kind != GATE_OFF

    @property
    def hidden_dim(self) -> int:
        return self.reduce_weights.shape[0]

    @property
    def num_trees(self) -> int:
        return self.reduce_weights.shape[1]

    def copy(self) -> "AttentionParameters":
        return AttentionParameters(
            reduce_weights=self.reduce_weights.copy(),
            expand_weights=self.expand_weights.copy(),
            reduction=self.reduction,
            gate_kind=self.gate_kind,
        )

    @property
    def nbytes(self) -> int:
        return self.reduce_weights.nbytes + self.expand_weights.nbytes


def init_attention(
    num_trees: int,
    reduction: int,
    gate_kind: str,
    rng: np.random.Generator,
) -> AttentionParameters:
    """Uniform fan-in initialization of the two bottleneck layers.

    Requires r to divide K when r <= K; otherwise the hidden width clamps
    to 1.
    """
    if gate_kind not in GATE_KINDS:
        raise ValueError(f"unknown gate kind {gate_kind!r}")
    if reduction < 1:
        raise ValueError(f"reduction must be >= 1, got {reduction}")
    if gate_kind == GATE_OFF:
        return AttentionParameters(
            reduce_weights=np.zeros((0, num_trees)),
            expand_weights=np.zeros((num_trees, 0)),
            reduction=reduction,
            gate_kind=gate_kind,
        )
    if num_trees >= reduction and num_trees % reduction != 0:
        raise ValueError(
            f"reduction {reduction} does not divide tree count {num_trees}"
        )
    hidden = max(1, num_trees // reduction)
    bound1 = num_trees**-0.5
    bound2 = hidden**-0.5
    return AttentionParameters(
        reduce_weights=rng.uniform(-bound1, bound1, size=(hidden, num_trees)),
        expand_weights=rng.uniform(-bound2, bound2, size=(num_trees, hidden)),
        reduction=reduction,
        gate_kind=gate_kind,
    )


def squeeze(responses: np.ndarray) -> np.ndarray:
    """Tree descriptors: mean over the F response components, per sample.

    (B, K, F) -> (B, K). For F = 1 this is the response itself.
    """
    responses = np.asarray(responses, dtype=np.float64)
    if responses.ndim != 3:
        raise ValueError(f"expected (B, K, F) responses, got shape {responses.shape}")
    return responses.mean(axis=2)


def softmax(values: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-shifted for stability."""
    shifted = values - values.max(axis=-1, keepdims=True)
    expv = np.exp(shifted)
    return expv / expv.sum(axis=-1, keepdims=True)


def apply_gate(values: np.ndarray, gate_kind: str) -> np.ndarray:
    """Final nonlinearity of the regulate stage (elementwise or normalizing)."""
    if gate_kind == GATE_SIGMOID:
        return sigmoid(values)
    if gate_kind == GATE_SOFTMAX:
        return softmax(values)
    raise ValueError(f"no gate for kind {gate_kind!r}")


def regulate_with_trace(
    descriptors: np.ndarray, params: AttentionParameters
) -> tuple[np.ndarray, np.ndarray]:
    """Tree weights plus the pre-relu hidden activations (for backward).

    descriptors: (B, K) or (K,); returns (weights, hidden_pre) with weights
    of the same leading shape.
    """
    if not params.enabled:
        raise ValueError("regulate called with the attention gate off")
    z = np.asarray(descriptors, dtype=np.float64)
    hidden_pre = z @ params.reduce_weights.T
    activated = np.maximum(hidden_pre, 0.0)
    gate_pre = activated @ params.expand_weights.T
    return apply_gate(gate_pre, params.gate_kind), hidden_pre


def regulate(descriptors: np.ndarray, params: AttentionParameters) -> np.ndarray:
    """Per-tree weights: gate(expand . relu(reduce . z)).

    With the sigmoid gate each weight lies in (0, 1); with the softmax gate
    the K weights of a sample sum to 1.
    """
    weights, _ = regulate_with_trace(descriptors, params)
    return weights


def attended_prediction(responses: np.ndarray, tree_weights: np.ndarray) -> np.ndarray:
    """Weighted ensemble output: (1/K) * sum_h w_h * response_h per sample.

    Keeps the same 1/K factor as the plain average, so all-ones weights
    reproduce it.
    """
    responses = np.asarray(responses, dtype=np.float64)
    tree_weights = np.asarray(tree_weights, dtype=np.float64)
    if responses.ndim != 3 or tree_weights.shape != responses.shape[:2]:
        raise ValueError(
            f"responses {responses.shape} and weights {tree_weights.shape} disagree"
        )
    num_trees = responses.shape[1]
    return np.einsum("bk,bkf->bf", tree_weights, responses, optimize=True) / num_trees
