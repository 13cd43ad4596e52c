"""
Finite-difference verification of reverse-mode gradients.
"""
import logging
from typing import Callable, Optional, Sequence

import numpy as np

from app import autograd as ag
from app.autograd import Parameter, Tensor

logger = logging.getLogger(__name__)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def grad_check(fn: Callable[[], Tensor], params: Sequence[Parameter], eps: float = 1e-5,
               samples_per_param: Optional[int] = None, seed: int = 0, ignore_below: float = 0.0) -> float:
    """
    Compare backward() against central differences.

    Args:
        fn: Rebuilds the scalar loss from the current parameter values
        params: 64-bit parameters to check
        eps: Perturbation size
        samples_per_param: Check at most this many coordinates per parameter
        seed: Seed for coordinate sampling
        ignore_below: Skip coordinates where both gradients are smaller than this

    Returns:
        Maximum relative error over the checked coordinates
    """
    for param in params:
        if param.dtype != np.float64:
            raise ValueError(f"grad_check needs float64 parameters, {param.name} is {param.dtype}")
        param.zero_grad()

    ag.backward(fn())
    analytic = {id(p): p.grad.copy() for p in params}
    for param in params:
        param.zero_grad()

    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for param in params:
        flat = param.data.reshape(-1)
        coords = np.arange(flat.size)
        if samples_per_param is not None and flat.size > samples_per_param:
            coords = np.sort(rng.choice(flat.size, size=samples_per_param, replace=False))

        grad = analytic[id(param)].reshape(-1)
        for index in coords:
            original = flat[index]
            with ag.no_grad():
                flat[index] = original + eps
                plus = fn().item()
                flat[index] = original - eps
                minus = fn().item()
            flat[index] = original

            numeric = (plus - minus) / (2 * eps)
            if abs(grad[index]) < ignore_below and abs(numeric) < ignore_below:
                continue
            error = relative_error(float(grad[index]), numeric)
            if error > worst:
                worst = error
                logger.debug(f"{param.name}[{index}]: analytic={grad[index]:.6e} numeric={numeric:.6e}")
    return worst
