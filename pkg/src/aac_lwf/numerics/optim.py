from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvariantError, ParameterError
from .tensor import Tensor


@dataclass
class AdamState:
    """Moment buffers and hyper-parameters; defaults are the usual Adam ones."""

    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, grads: dict[str, np.ndarray] | None = None) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    ``grads`` defaults to each parameter's ``.grad``; a parameter without a
    gradient is an error rather than a silent skip.
    """
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad if grads is None else grads.get(name)
        if g is None:
            raise InvariantError(f"parameter {name!r} has no gradient")
        if g.shape != p.data.shape:
            raise ParameterError(f"gradient for {name!r} has shape {g.shape}, expected {p.data.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.first_moment[name] = m
        state.second_moment[name] = v
        p.data -= state.alpha * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    state.step_count = t
    return state


class Adam:
    """Thin stateful wrapper around :func:`adam_step` for a named parameter set."""

    def __init__(self, params: dict[str, Tensor], alpha=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = params
        self.state = AdamState(alpha=alpha, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)
