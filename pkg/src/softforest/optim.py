"""Parameter update rules: plain SGD, Adam, and QHAdam.

QHAdam interpolates between the raw gradient and the bias-corrected Adam
moments via the quasi-hyperbolic weights nu1 (numerator) and nu2
(denominator); nu1 = nu2 = 1 recovers Adam exactly. Weight decay is
decoupled: applied to the parameters before the gradient step, never
mixed into the moment buffers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SoftForestError

SGD = "sgd"
ADAM = "adam"
QHADAM = "qhadam"

OPTIMIZER_KINDS = (SGD, ADAM, QHADAM)


@dataclass
class OptimizerState:
    """Update rule plus per-parameter moment buffers and the step counter."""

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    nu1: float = 0.7
    nu2: float = 1.0
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    first_moments: dict[str, np.ndarray] = field(default_factory=dict)
    second_moments: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")

    @property
    def nbytes(self) -> int:
        buffers = list(self.first_moments.values()) + list(self.second_moments.values())
        return sum(b.nbytes for b in buffers)


def step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """Apply one update in place; returns the same params and state.

    sgd:    p -= lr * g
    adam:   p -= lr * m_hat / (sqrt(v_hat) + eps), bias-corrected moments
    qhadam: p -= lr * ((1-nu1) g + nu1 m_hat)
                 / (sqrt((1-nu2) g^2 + nu2 v_hat) + eps)

    Aborts (no partial update) if any gradient entry is non-finite.
    """
    for name, grad in grads.items():
        if not np.isfinite(grad).all():
            raise SoftForestError(f"non-finite gradient in group {name!r}")
        if name not in params:
            raise ValueError(f"gradient group {name!r} has no matching parameter")

    state.step_count += 1
    lr = state.learning_rate
    decay = state.weight_decay

    if state.kind == SGD:
        for name, grad in grads.items():
            if decay > 0:
                params[name] *= 1.0 - lr * decay
            params[name] -= lr * grad
        return params, state

    bias1 = 1.0 - state.beta1**state.step_count
    bias2 = 1.0 - state.beta2**state.step_count
    for name, grad in grads.items():
        if name not in state.first_moments:
            state.first_moments[name] = np.zeros_like(params[name])
            state.second_moments[name] = np.zeros_like(params[name])
        m = state.first_moments[name]
        v = state.second_moments[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        m_hat = m / bias1
        v_hat = v / bias2
        if state.kind == ADAM:
            update = m_hat / (np.sqrt(v_hat) + state.eps)
        else:
            numerator = (1.0 - state.nu1) * grad + state.nu1 * m_hat
            denominator = np.sqrt((1.0 - state.nu2) * (grad * grad) + state.nu2 * v_hat)
            update = numerator / (denominator + state.eps)
        if decay > 0:
            params[name] *= 1.0 - lr * decay
        params[name] -= lr * update
    return params, state
