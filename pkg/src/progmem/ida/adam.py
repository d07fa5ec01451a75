"""Bias-corrected Adam over named parameters, with optional per-element freezing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, frozen: Optional[dict] = None) -> None:
    """Apply one Adam update in place using each parameter's ``grad``.

    ``frozen`` maps a parameter name to a boolean array (True = keep fixed) or
    to ``True`` for the whole tensor.  Frozen elements are never written.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None or m.shape != g.shape:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        mask = None if frozen is None else frozen.get(name)
        if mask is True:
            continue
        if mask is not None:
            update = np.where(mask, 0.0, update)
        p.data -= update
