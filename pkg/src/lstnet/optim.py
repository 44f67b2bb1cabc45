"""Adam with bias correction; moment state lives on each Parameter."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .autograd import Parameter


class Adam:
    def __init__(
        self,
        params: Iterable[Parameter],
        lr: float = 1e-4,
        beta1: float = 0.8,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        for name, beta in (("beta1", beta1), ("beta2", beta2)):
            if not 0 <= beta < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {beta}")
        # dedupe while keeping order; shared layers appear in several networks
        seen: dict[int, Parameter] = {}
        for p in params:
            seen.setdefault(id(p), p)
        self.params = list(seen.values())
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        b1, b2 = self.beta1, self.beta2
        for p in self.params:
            g = p.grad
            p.t += 1
            p.m *= b1
            p.m += (1 - b1) * g
            p.v *= b2
            p.v += (1 - b2) * (g * g)
            m_hat = p.m / (1 - b1 ** p.t)
            v_hat = p.v / (1 - b2 ** p.t)
            update = self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
            p.data -= update.astype(p.dtype, copy=False)


def adam_step(params, lr=1e-4, beta1=0.8, beta2=0.999, epsilon=1e-8) -> None:
    """Apply one Adam update in place to ``params`` using their current gradients."""
    Adam(params, lr, beta1, beta2, epsilon).step()
