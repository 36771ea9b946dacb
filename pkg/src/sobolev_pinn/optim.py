"""Adam on flat parameter vectors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import MlpParams


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if lr <= 0 or not (0 <= beta1 < 1) or not (0 <= beta2 < 1) or eps <= 0:
            raise ValueError(f"invalid Adam hyperparameters lr={lr} beta1={beta1} beta2={beta2} eps={eps}")
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_update(state: AdamState, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam step on a flat vector; updates ``state`` in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError(f"shape mismatch: params {theta.shape}, grad {grad.shape}, moments {state.m.shape}")
    bad = ~np.isfinite(grad)
    if bad.any():
        idx = np.flatnonzero(bad)
        raise NonFiniteGradientError(
            f"non-finite gradient at step {state.step + 1}: {idx.size} entries, first at {idx[:5].tolist()}"
        )
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step(state: AdamState, params: MlpParams, grad: np.ndarray) -> tuple[MlpParams, AdamState]:
    new = adam_update(state, params.flatten(), grad)
    return params.with_flat(new), state
