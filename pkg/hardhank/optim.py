"""Bias-corrected ADAM over a flat parameter vector."""
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from .config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from .errors import NumericalError
from .network import ParamVector


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates, step counter and hyper-parameters."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    alpha: float = 1e-4
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros(cls, size: int, alpha: float, **hyper) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), t=0, alpha=alpha, **hyper)


def adam_step(state: AdamState, params: ParamVector, grad: np.ndarray) -> Tuple[AdamState, ParamVector]:
    """Apply one ADAM update and return the new state and parameters.

    Raises:
        ValueError: Length mismatch between state, params and gradient.
        NumericalError: Non-finite gradient (the trainer resets on this).
    """
    grad = np.asarray(grad, dtype=np.float64)
    if not (len(state.m) == len(state.v) == len(params) == len(grad)):
        raise ValueError(
            f"length mismatch: m={len(state.m)} v={len(state.v)} params={len(params)} grad={len(grad)}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient passed to adam_step")

    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    values = params.values - state.alpha * m_hat / (np.sqrt(v_hat) + state.eps)

    return replace(state, m=m, v=v, t=t), ParamVector(values, tuple(params.layer_offsets))


__all__ = ["AdamState", "adam_step"]
