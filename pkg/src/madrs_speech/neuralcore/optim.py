"""Adam with bias correction and L2-style weight decay.

Weight decay is added to the raw gradient before the moment updates
(classic Adam, not the decoupled variant). Each ParamTensor carries its
own step counter; the trainer passes the global step so a skipped or
repeated update is caught instead of silently corrupting the moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .nn import ParamTensor


class StaleStepError(RuntimeError):
    """adam_step called with a step that does not follow the tensor's counter."""


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 < self.beta1 < 1.0:
            raise ValueError(f"beta1 must be in (0, 1), got {self.beta1}")
        if not 0.0 < self.beta2 < 1.0:
            raise ValueError(f"beta2 must be in (0, 1), got {self.beta2}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def adam_step(param: ParamTensor, cfg: OptimizerConfig, step: int) -> None:
    """Apply one Adam update to a single parameter tensor."""
    if step != param.step + 1:
        raise StaleStepError(
            f"{param.name}: step {step} does not follow counter {param.step}"
        )
    grad = param.grad
    if cfg.weight_decay != 0.0:
        grad = grad + cfg.weight_decay * param.value
    param.m *= cfg.beta1
    param.m += (1.0 - cfg.beta1) * grad
    param.v *= cfg.beta2
    param.v += (1.0 - cfg.beta2) * grad * grad
    m_hat = param.m / (1.0 - math.pow(cfg.beta1, step))
    v_hat = param.v / (1.0 - math.pow(cfg.beta2, step))
    param.value -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
    param.step = step


def adam_step_all(params: Iterable[ParamTensor], cfg: OptimizerConfig, step: int) -> None:
    for param in params:
        adam_step(param, cfg, step)
