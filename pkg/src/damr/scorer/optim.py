"""Adam optimizer over named parameter tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ScorerParams


@dataclass
class AdamState:
    """Per-tensor moment accumulators plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params: ScorerParams) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like())


def adam_step(
    params: ScorerParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> None:
    """One bias-corrected Adam update, applied to the tensors in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.step
    bias2 = 1.0 - b2**state.step
    for name, tensor in params.tensors.items():
        grad = grads[name]
        if grad.shape != tensor.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {tensor.shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        m_hat = m / bias1
        v_hat = v / bias2
        tensor -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
