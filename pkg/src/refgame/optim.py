"""RMSProp with a per-entry running mean-square accumulator."""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import ConfigError
from .params import ParamTensor


def rmsprop_update(params: Iterable[ParamTensor], lr: float, rho: float = 0.9,
                   eps: float = 1e-8) -> None:
    """One update step: s <- rho*s + (1-rho)*g^2; theta <- theta - lr*g/(sqrt(s)+eps).

    Gradients are zeroed after the step.
    """
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if not 0.0 <= rho < 1.0:
        raise ConfigError(f"rho must be in [0, 1), got {rho}")
    for p in params:
        g = p.grad
        p.opt_state *= rho
        p.opt_state += (1.0 - rho) * g * g
        p.values -= lr * g / (np.sqrt(p.opt_state) + eps)
        p.grad[...] = 0.0
