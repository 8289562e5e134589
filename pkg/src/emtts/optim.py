"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"non-finite gradient for parameter {name!r}; step aborted")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-6


def adam_step(params: dict, grads: dict, state: AdamState, cfg) -> tuple[dict, AdamState]:
    """Update ``params`` in place; ``cfg`` needs learning_rate, beta1, beta2, eps.

    Every gradient is checked before any parameter moves, so a NaN leaves
    both parameters and state untouched. Missing gradients count as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= (cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)
    return params, state
