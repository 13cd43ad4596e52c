"""
Adam with classical L2 weight decay.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from app.autograd import Parameter

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment estimates keyed by parameter name, plus the step counter"""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float, weight_decay: float = 0.0):
    """
    One bias-corrected Adam update.

    The decay term weight_decay * theta is added to the gradient before the
    moment updates. Gradients are zeroed afterwards.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.t
    correction2 = 1.0 - b2 ** state.t

    for param in params:
        grad = param.grad
        if weight_decay:
            grad = grad + weight_decay * param.data

        m = state.m.get(param.name)
        if m is None:
            m = state.m[param.name] = np.zeros_like(param.data)
            state.v[param.name] = np.zeros_like(param.data)
        v = state.v[param.name]

        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad

        if lr:
            m_hat = m / correction1
            v_hat = v / correction2
            param.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)

        param.zero_grad()
