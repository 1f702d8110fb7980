"""Adam with bias-corrected moments."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state: AdamState) -> None:
    """Update ``params`` (Tensors or arrays) in place from ``grads``.

    A ``None`` gradient counts as zero.
    """
    if len(params) != len(grads):
        raise DimensionError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros(np.shape(_data(p))) for p in params]
        state.v = [np.zeros(np.shape(_data(p))) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        data = _data(p)
        if g is None:
            g = np.zeros_like(data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != data.shape or m.shape != data.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {data.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def _data(p):
    return p.data if hasattr(p, "data") and not isinstance(p, np.ndarray) else p


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state)
