"""Adam with decoupled weight decay, operating on autograd leaf tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .autograd import GraphError, Tensor

__all__ = ["OptimState", "AdamW"]


@dataclass
class OptimState:
    """Per-parameter moment buffers plus the shared step counter."""

    learning_rate: float
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


class AdamW:
    """Decoupled weight decay: the decay term never enters the moments."""

    def __init__(
        self,
        params: List[Tensor],
        learning_rate: float,
        weight_decay: float = 0.01,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if learning_rate <= 0:
            raise GraphError("learning_rate must be positive")
        if weight_decay < 0:
            raise GraphError("weight_decay must be non-negative")
        self.params = list(params)
        self.state = OptimState(
            learning_rate=learning_rate,
            weight_decay=weight_decay,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )
        for i, p in enumerate(self.params):
            self.state.m[i] = np.zeros_like(p.data)
            self.state.v[i] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        st = self.state
        st.step += 1
        b1, b2 = st.beta1, st.beta2
        bc1 = 1.0 - b1**st.step
        bc2 = 1.0 - b2**st.step
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise GraphError(
                    f"gradient shape {g.shape} does not match parameter {p.data.shape}"
                )
            m = st.m[i]
            v = st.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            if st.weight_decay != 0.0:
                p.data -= st.learning_rate * st.weight_decay * p.data
            p.data -= st.learning_rate * mhat / (np.sqrt(vhat) + st.epsilon)
