"""AdamW with bias correction and decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .tensor import Tensor


@dataclass
class AdamWState:
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState) -> None:
    """One in-place AdamW update of ``params`` given ``grads``.

    ``theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)``,
    with ``m_hat``/``v_hat`` the bias-corrected moment estimates at step t.
    """
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adamw: grad for {name!r} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is not None and m.shape != p.shape:
            raise DimensionError(f"adamw: state for {name!r} has shape {m.shape}, parameter {p.shape}")
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    lr = state.learning_rate
    for name, p in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        if state.weight_decay:
            update = update + state.weight_decay * p
        p -= lr * update


class AdamW:
    """Optimizer over a fixed, named set of parameter tensors."""

    def __init__(self, params: dict[str, Tensor], lr: float = 5e-5, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = dict(params)
        self.state = AdamWState(learning_rate=lr, beta1=betas[0], beta2=betas[1],
                                epsilon=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def step(self) -> None:
        grads = {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in self.params.items()}
        adamw_step({n: p.data for n, p in self.params.items()}, grads, self.state)
