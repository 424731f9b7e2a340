"""Soft decision forest parameters and the differentiable forward pass.

Every tree is a perfect binary tree of uniform depth d, stored in heap
layout: internal nodes are numbered 1 .. 2^d - 1 in level order (children
of node n are 2n and 2n + 1), leaves are 2^d .. 2^(d+1) - 1. Arrays are
0-based, so heap node n lives in row n - 1 and leaf j in row j - 2^d.

Routing convention: at node n a sample goes to the LEFT child with
probability 1 - g_n and to the RIGHT child with probability g_n, where
g_n = sigmoid(w_n . x - t_n). This convention is load-bearing for the
backward pass and the tests; it is not configurable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic sigmoid, branch form: no overflow for any finite input."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    expz = np.exp(z[~pos])
    out[~pos] = expz / (1.0 + expz)
    return out


@dataclass
class TreeParameters:
    """Learnable weights of one tree.

    node_weights:    (2^d - 1, M) hyperplane per internal node
    node_thresholds: (2^d - 1,)   decision threshold per internal node
    leaf_responses:  (2^d, F)     output row per leaf
    """

    depth: int
    node_weights: np.ndarray
    node_thresholds: np.ndarray
    leaf_responses: np.ndarray


@dataclass
class ForestParameters:
    """K trees of identical shape, stored stacked for vectorized math.

    node_weights:    (K, 2^d - 1, M)
    node_thresholds: (K, 2^d - 1)
    leaf_responses:  (K, 2^d, F)
    """

    depth: int
    node_weights: np.ndarray
    node_thresholds: np.ndarray
    leaf_responses: np.ndarray

    @property
    def num_trees(self) -> int:
        return self.node_weights.shape[0]

    @property
    def num_internal(self) -> int:
        return self.node_weights.shape[1]

    @property
    def num_leaves(self) -> int:
        return self.leaf_responses.shape[1]

    @property
    def num_features(self) -> int:
        return self.node_weights.shape[2]

    @property
    def response_dim(self) -> int:
        return self.leaf_responses.shape[2]

    def tree(self, h: int) -> TreeParameters:
        """View (not copy) of tree h."""
        return TreeParameters(
            depth=self.depth,
            node_weights=self.node_weights[h],
            node_thresholds=self.node_thresholds[h],
            leaf_responses=self.leaf_responses[h],
        )

    @property
    def trees(self) -> list[TreeParameters]:
        return [self.tree(h) for h in range(self.num_trees)]

    def copy(self) -> "ForestParameters":
        return ForestParameters(
            depth=self.depth,
            node_weights=self.node_weights.copy(),
            node_thresholds=self.node_thresholds.copy(),
            leaf_responses=self.leaf_responses.copy(),
        )

    @property
    def nbytes(self) -> int:
        return (
            self.node_weights.nbytes
            + self.node_thresholds.nbytes
            + self.leaf_responses.nbytes
        )


@dataclass
class ForwardTrace:
    """Intermediates cached by the forward pass for the backward pass.

    gatings:    (B, K, 2^d - 1) sigmoid outputs per internal node
    leaf_probs: (B, K, 2^d)     routing distribution per tree
    responses:  (B, K, F)       per-tree outputs
    prediction: (B, F)          ensemble output (attended or plain average)

    The attention fields stay None when the attention gate is off.
    """

    gatings: np.ndarray
    leaf_probs: np.ndarray
    responses: np.ndarray
    prediction: np.ndarray | None = None
    descriptors: np.ndarray | None = None  # (B, K) squeeze output
    hidden_pre: np.ndarray | None = None  # (B, hidden) before relu
    tree_weights: np.ndarray | None = None  # (B, K) attention weights

    @property
    def batch_size(self) -> int:
        return self.gatings.shape[0]

    @property
    def nbytes(self) -> int:
        arrays = (
            self.gatings,
            self.leaf_probs,
            self.responses,
            self.prediction,
            self.descriptors,
            self.hidden_pre,
            self.tree_weights,
        )
        return sum(a.nbytes for a in arrays if a is not None)


def init_forest(
    num_trees: int,
    depth: int,
    num_features: int,
    response_dim: int,
    rng: np.random.Generator,
) -> ForestParameters:
    """Fresh forest: weights ~ N(0, 1/sqrt(M)), thresholds 0, leaves ~ N(0, 0.01).

    Keeps initial gating near 0.5 (maximal sigmoid slope) and initial
    predictions near zero.
    """
    if num_trees < 1 or depth < 1 or num_features < 1 or response_dim < 1:
        raise ValueError("num_trees, depth, num_features, response_dim must be >= 1")
    n_internal = (1 << depth) - 1
    n_leaves = 1 << depth
    return ForestParameters(
        depth=depth,
        node_weights=rng.normal(
            0.0, num_features**-0.5, size=(num_trees, n_internal, num_features)
        ),
        node_thresholds=np.zeros((num_trees, n_internal)),
        leaf_responses=rng.normal(0.0, 0.01, size=(num_trees, n_leaves, response_dim)),
    )


def gating_values(tree: TreeParameters, rows: np.ndarray) -> np.ndarray:
    """Per-node routing probabilities g = sigmoid(w . x - t) for a batch.

    Returns a (B, 2^d - 1) matrix with entries in (0, 1).
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[1] != tree.node_weights.shape[1]:
        raise ValueError(
            f"batch has {rows.shape[1]} features, tree expects "
            f"{tree.node_weights.shape[1]}"
        )
    return sigmoid(rows @ tree.node_weights.T - tree.node_thresholds)


def leaf_probabilities(gatings: np.ndarray, depth: int) -> np.ndarray:
    """Product of branch factors along each root-to-leaf path.

    Accepts gatings of shape (..., 2^d - 1) in heap order and returns
    (..., 2^d) leaf probabilities ordered left to right. Left branches
    contribute 1 - g, right branches g, so each row sums to 1.
    """
    g = np.asarray(gatings, dtype=np.float64)
    lead = g.shape[:-1]
    prob = np.ones(lead + (1,))
    for level in range(depth):
        lo = (1 << level) - 1
        hi = (1 << (level + 1)) - 1
        g_level = g[..., lo:hi]
        pair = np.stack(((1.0 - g_level) * prob, g_level * prob), axis=-1)
        prob = pair.reshape(lead + (1 << (level + 1),))
    return prob


def tree_response(tree: TreeParameters, leaf_probs: np.ndarray) -> np.ndarray:
    """Probability-weighted sum of the leaf response rows.

    leaf_probs may be a single length-2^d vector or a (B, 2^d) batch; each
    row is expected to sum to 1 (within 1e-9).
    """
    return np.asarray(leaf_probs, dtype=np.float64) @ tree.leaf_responses


def forest_responses(
    forest: ForestParameters, rows: np.ndarray
) -> tuple[np.ndarray, ForwardTrace]:
    """All K tree responses for a batch, plus the cached forward trace.

    Returns a (B, K, F) tensor; the trace holds gatings and leaf
    probabilities for the backward pass.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != forest.num_features:
        raise ValueError(
            f"batch shape {rows.shape} incompatible with forest on "
            f"{forest.num_features} features"
        )
    # (B, K, n_internal) pre-activations via one flat GEMM
    flat_weights = forest.node_weights.reshape(-1, forest.num_features)
    z = (rows @ flat_weights.T).reshape(
        rows.shape[0], forest.num_trees, forest.num_internal
    )
    z -= forest.node_thresholds
    gatings = sigmoid(z)
    leaf_probs = leaf_probabilities(gatings, forest.depth)
    responses = np.einsum(
        "bkj,kjf->bkf", leaf_probs, forest.leaf_responses, optimize=True
    )
    trace = ForwardTrace(gatings=gatings, leaf_probs=leaf_probs, responses=responses)
    return responses, trace


def ensemble_average(responses: np.ndarray) -> np.ndarray:
    """Plain uniform ensemble output: mean of the K tree responses."""
    responses = np.asarray(responses, dtype=np.float64)
    if responses.ndim != 3:
        raise ValueError(f"expected (B, K, F) responses, got shape {responses.shape}")
    return responses.mean(axis=1)


def hard_leaf_index(tree: TreeParameters, row: np.ndarray) -> int:
    """Classical hard-routing leaf for one sample: go right iff w . x - t > 0.

    This is the saturation limit of the soft routing; used as an oracle for
    the hard-routing tests.
    """
    node = 1
    n_internal = tree.node_weights.shape[0]
    while node <= n_internal:
        z = float(tree.node_weights[node - 1] @ row - tree.node_thresholds[node - 1])
        node = 2 * node + 1 if z > 0 else 2 * node
    return node - (n_internal + 1)
