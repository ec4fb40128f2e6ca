"""Adam over a dict of numpy parameter arrays (updated in place)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PAPER_LR = 3e-4


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = PAPER_LR) -> AdamState:
    """One bias-corrected Adam update; parameters without a gradient entry are left alone."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if lr:
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state
