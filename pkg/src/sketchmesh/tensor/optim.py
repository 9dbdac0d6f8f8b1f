"""Adam optimizer with bias correction, operating on leaf tensors."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Tensor


class AdamState:
    """First/second moment buffers plus the shared timestep."""

    def __init__(self, params: Sequence[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: Sequence[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One in-place Adam update; every parameter must carry a gradient."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} (shape {p.shape}) has no grad")
        if state.m[i].shape != p.data.shape:
            raise ValueError(f"adam_step: state/parameter shape mismatch at {i}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i, p in enumerate(params):
        g = p.grad.data
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data = p.data - lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Thin stateful wrapper around :func:`adam_step`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.state = AdamState(self.params)

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.betas[0], self.betas[1], self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
