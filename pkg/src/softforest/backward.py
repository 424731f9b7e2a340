"""Reverse-mode gradients of the full pipeline, plus a finite-difference oracle.

The backward pass is hand-derived and mirrors the forward stages in
reverse: loss -> attention gate -> bottleneck layers -> squeeze ->
per-tree responses -> leaf probabilities -> gating -> parameters. All
averaging factors (1/B from the batch mean, 1/K from the ensemble, 1/F
from the squeeze) propagate into every gradient.

The gradient of a leaf probability with respect to an on-path gating
value is the product of the remaining branch factors on that path. It is
computed by a level sweep that reuses the partial path products, never by
dividing the leaf probability by the factor, so saturated gates (factors
near zero) stay exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import GATE_SIGMOID, GATE_SOFTMAX, AttentionParameters
from .data import Batch
from .errors import SoftForestError
from .forest import ForestParameters, ForwardTrace
from .model import model_forward, parameter_dict
from .objective import TaskBinding, loss, loss_gradient


@dataclass
class GradientBuffer:
    """d(mean batch loss)/d(parameter) for every learnable array.

    Shapes mirror ForestParameters and AttentionParameters; the attention
    arrays are empty when the gate is off.
    """

    node_weights: np.ndarray
    node_thresholds: np.ndarray
    leaf_responses: np.ndarray
    attention_reduce: np.ndarray
    attention_expand: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        grads = {
            "node_weights": self.node_weights,
            "node_thresholds": self.node_thresholds,
            "leaf_responses": self.leaf_responses,
        }
        if self.attention_reduce.size or self.attention_expand.size:
            grads["attention_reduce"] = self.attention_reduce
            grads["attention_expand"] = self.attention_expand
        return grads

    @property
    def nbytes(self) -> int:
        return (
            self.node_weights.nbytes
            + self.node_thresholds.nbytes
            + self.leaf_responses.nbytes
            + self.attention_reduce.nbytes
            + self.attention_expand.nbytes
        )


def _path_partials(gatings: np.ndarray, depth: int) -> list[np.ndarray]:
    """Partial branch-factor products above each level.

    partials[l] has shape (B, K, 2^l): the probability of reaching each
    node at level l. partials[depth] would be the leaf distribution; it is
    not stored because the caller already has it.
    """
    lead = gatings.shape[:-1]
    partials = [np.ones(lead + (1,))]
    for level in range(depth - 1):
        lo = (1 << level) - 1
        hi = (1 << (level + 1)) - 1
        g_level = gatings[..., lo:hi]
        mu = partials[level]
        pair = np.stack(((1.0 - g_level) * mu, g_level * mu), axis=-1)
        partials.append(pair.reshape(lead + (1 << (level + 1),)))
    return partials


def _leaf_prob_backward(
    gatings: np.ndarray, d_leaf_probs: np.ndarray, depth: int
) -> np.ndarray:
    """Gradient wrt each gating value from the leaf-probability gradients.

    Reverse of the level-sweep product: at every node the two child
    gradients combine with the partial product above the node, so each
    d(p_leaf)/d(g_node) is realized as a product excluding the node's own
    factor (sign + for the right branch, - for the left).
    """
    lead = gatings.shape[:-1]
    partials = _path_partials(gatings, depth)
    d_gatings = np.empty_like(gatings)
    d_mu = d_leaf_probs
    for level in reversed(range(depth)):
        lo = (1 << level) - 1
        hi = (1 << (level + 1)) - 1
        g_level = gatings[..., lo:hi]
        d_pair = d_mu.reshape(lead + (1 << level, 2))
        d_left = d_pair[..., 0]
        d_right = d_pair[..., 1]
        d_gatings[..., lo:hi] = partials[level] * (d_right - d_left)
        d_mu = d_left * (1.0 - g_level) + d_right * g_level
    return d_gatings


def backward_pass(
    trace: ForwardTrace,
    batch: Batch,
    forest: ForestParameters,
    attention: AttentionParameters,
    binding: TaskBinding,
) -> GradientBuffer:
    """Gradients of the mean batch loss for every learnable scalar.

    The trace must come from ``model_forward`` on the same batch and the
    same parameters.
    """
    if trace.batch_size != batch.size:
        raise ValueError(
            f"trace batch size {trace.batch_size} != batch size {batch.size}"
        )
    if trace.prediction is None:
        raise ValueError("trace has no prediction; not produced by model_forward")
    if attention.enabled and trace.tree_weights is None:
        raise ValueError("attention is enabled but the trace has no tree weights")

    num_trees = forest.num_trees
    d_pred = loss_gradient(trace.prediction, batch.targets, binding)  # (B, F)

    if attention.enabled:
        omega = trace.tree_weights
        responses = trace.responses
        # prediction = (1/K) sum_h omega_h * response_h
        d_responses = d_pred[:, None, :] * omega[:, :, None] / num_trees
        d_omega = np.einsum("bf,bkf->bk", d_pred, responses, optimize=True) / num_trees
        if attention.gate_kind == GATE_SIGMOID:
            d_gate_pre = d_omega * omega * (1.0 - omega)
        elif attention.gate_kind == GATE_SOFTMAX:
            inner = (d_omega * omega).sum(axis=1, keepdims=True)
            d_gate_pre = omega * (d_omega - inner)
        else:
            raise ValueError(f"no gate backward for kind {attention.gate_kind!r}")
        activated = np.maximum(trace.hidden_pre, 0.0)
        d_expand = d_gate_pre.T @ activated  # (K, hidden)
        d_activated = d_gate_pre @ attention.expand_weights  # (B, hidden)
        d_hidden = d_activated * (trace.hidden_pre > 0.0)  # relu mask
        d_reduce = d_hidden.T @ trace.descriptors  # (hidden, K)
        d_descriptors = d_hidden @ attention.reduce_weights  # (B, K)
        # squeeze spread the mean over F components
        d_responses = d_responses + d_descriptors[:, :, None] / forest.response_dim
    else:
        d_responses = np.broadcast_to(
            d_pred[:, None, :] / num_trees,
            (batch.size, num_trees, forest.response_dim),
        )
        d_expand = np.zeros_like(attention.expand_weights)
        d_reduce = np.zeros_like(attention.reduce_weights)

    d_leaf_responses = np.einsum(
        "bkj,bkf->kjf", trace.leaf_probs, d_responses, optimize=True
    )
    d_leaf_probs = np.einsum(
        "bkf,kjf->bkj", d_responses, forest.leaf_responses, optimize=True
    )
    d_gatings = _leaf_prob_backward(trace.gatings, d_leaf_probs, forest.depth)
    d_z = d_gatings * trace.gatings * (1.0 - trace.gatings)  # sigmoid: g(1-g)
    d_node_weights = np.einsum("bkn,bm->knm", d_z, batch.rows, optimize=True)
    d_node_thresholds = -d_z.sum(axis=0)  # z = w.x - t

    return GradientBuffer(
        node_weights=d_node_weights,
        node_thresholds=d_node_thresholds,
        leaf_responses=d_leaf_responses,
        attention_reduce=d_reduce,
        attention_expand=d_expand,
    )


@dataclass
class GroupCheck:
    """Finite-difference result for one parameter group."""

    name: str
    checked: int
    max_rel_error: float
    mean_rel_error: float


@dataclass
class GradcheckReport:
    groups: list[GroupCheck]
    epsilon: float

    @property
    def max_rel_error(self) -> float:
        return max(g.max_rel_error for g in self.groups)

    @property
    def mean_rel_error(self) -> float:
        total = sum(g.mean_rel_error * g.checked for g in self.groups)
        return total / sum(g.checked for g in self.groups)

    def passed(self, threshold: float = 1e-4) -> bool:
        return all(g.max_rel_error < threshold for g in self.groups)

    def failing_groups(self, threshold: float = 1e-4) -> list[str]:
        return [g.name for g in self.groups if g.max_rel_error >= threshold]

    def format_table(self) -> str:
        lines = [f"{'group':<20} {'checked':>8} {'max rel err':>14} {'mean rel err':>14}"]
        for g in self.groups:
            lines.append(
                f"{g.name:<20} {g.checked:>8} {g.max_rel_error:>14.3e} "
                f"{g.mean_rel_error:>14.3e}"
            )
        return "\n".join(lines)


def gradcheck_model(
    num_trees: int,
    depth: int,
    num_features: int,
    batch_size: int,
    binding: TaskBinding,
    reduction: int,
    gate_kind: str,
    seed: int,
) -> tuple[ForestParameters, AttentionParameters, Batch]:
    """Random model and batch for gradient verification.

    Unlike the training initialization, every parameter group is drawn at
    O(1) scale (nonzero thresholds, unit-variance leaf responses) so no
    gradient sits at the finite-difference noise floor.
    """
    from .attention import init_attention
    from .forest import init_forest

    rng = np.random.default_rng(seed)
    forest = init_forest(num_trees, depth, num_features, binding.response_dim, rng)
    forest.node_thresholds[:] = rng.normal(0.0, 0.5, forest.node_thresholds.shape)
    forest.leaf_responses[:] = rng.normal(0.0, 1.0, forest.leaf_responses.shape)
    attention = init_attention(num_trees, reduction, gate_kind, rng)
    rows = rng.normal(size=(batch_size, num_features))
    if binding.kind == "regression":
        targets = rng.normal(size=batch_size)
    else:
        targets = rng.integers(0, max(2, binding.classes), size=batch_size)
    return forest, attention, Batch(rows=rows, targets=targets)


def _relative_error(analytic: float, numeric: float) -> float:
    # both-zero convention: an exactly-zero analytic gradient with numeric
    # noise below 1e-10 counts as agreement
    if analytic == 0.0 and abs(numeric) < 1e-10:
        return 0.0
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def finite_difference_check(
    forest: ForestParameters,
    attention: AttentionParameters,
    batch: Batch,
    binding: TaskBinding,
    epsilon: float = 1e-5,
    max_probes: int = 2000,
    seed: int = 0,
) -> GradcheckReport:
    """Central finite differences of the batch loss vs the backward pass.

    Every learnable scalar is probed when the model has at most
    ``max_probes`` of them; larger models get a deterministic random
    subsample (at least 200 scalars overall, spread over all groups).
    Relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    if max_probes < 200:
        raise ValueError("max_probes must be >= 200")
    _, trace = model_forward(forest, attention, batch.rows)
    analytic = backward_pass(trace, batch, forest, attention, binding).as_dict()
    params = parameter_dict(forest, attention)

    def loss_value() -> float:
        pred, _ = model_forward(forest, attention, batch.rows)
        value, _ = loss(pred, batch.targets, binding)
        return value

    total = sum(a.size for a in params.values())
    rng = np.random.default_rng(seed)
    groups = []
    for name, array in params.items():
        if array.size == 0:
            continue
        if total <= max_probes:
            indices = np.arange(array.size)
        else:
            quota = min(array.size, max(20, round(max_probes * array.size / total)))
            indices = np.sort(rng.choice(array.size, size=quota, replace=False))
        flat = array.reshape(-1)  # view: probes mutate the live parameters
        grad_flat = analytic[name].reshape(-1)
        errors = np.empty(len(indices))
        for slot, i in enumerate(indices):
            original = flat[i]
            flat[i] = original + epsilon
            loss_up = loss_value()
            flat[i] = original - epsilon
            loss_down = loss_value()
            flat[i] = original
            if not (np.isfinite(loss_up) and np.isfinite(loss_down)):
                raise SoftForestError(
                    f"non-finite loss while probing {name}[{i}]"
                )
            numeric = (loss_up - loss_down) / (2.0 * epsilon)
            errors[slot] = _relative_error(grad_flat[i], numeric)
        groups.append(
            GroupCheck(
                name=name,
                checked=len(indices),
                max_rel_error=float(errors.max()),
                mean_rel_error=float(errors.mean()),
            )
        )
    return GradcheckReport(groups=groups, epsilon=epsilon)
