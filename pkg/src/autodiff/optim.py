"""
Adam optimizer (bias-corrected), with the moment buffers stored on each Parameter.
"""

from typing import Iterable, List

import numpy as np

from src.autodiff.module import Parameter
from src.utils.errors import NonFiniteGradientError


def adam_step(
    params: Iterable[Parameter],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """
    Apply one Adam update in place using each parameter's accumulated ``grad``.

    Parameters without a gradient are left untouched (their step counter too).
    A NaN/Inf gradient aborts before any parameter is modified.
    """
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
    params = [p for p in params if p.trainable and p.grad is not None]
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"Non-finite gradient for parameter '{p.name or '<unnamed>'}'")

    for p in params:
        g = p.grad
        p.step += 1
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        m_hat = p.m / (1 - beta1 ** p.step)
        v_hat = p.v / (1 - beta2 ** p.step)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


class Adam:
    """Thin stateful wrapper so training loops read like the usual pattern."""

    def __init__(self, params: List[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)
