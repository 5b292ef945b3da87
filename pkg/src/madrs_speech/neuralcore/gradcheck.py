"""Central finite-difference verification of analytic gradients.

The caller populates ``param.grad`` once (forward + backward), then
hands over a pure loss closure. Each parameter entry is perturbed by
+-h and the numerical derivative compared against the stored analytic
gradient. Run models in float64 here; float32 rounding swamps the
tolerance.

The error denominator is floored at 1e-4, which turns the criterion
into an absolute one (|analytic - numeric| < tolerance * 1e-4) for
near-zero gradients, where central differences bottom out at rounding
noise (~1e-11 for O(1) losses) and a pure relative error is undefined.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .nn import ParamTensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    tolerance: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(
    loss_fn: Callable[[], float],
    params: Iterable[ParamTensor],
    tolerance: float = 1e-5,
    h: float = 1e-5,
    denom_floor: float = 1e-4,
) -> GradCheckResult:
    """Compare stored analytic gradients against central differences of loss_fn."""
    worst = 0.0
    worst_name = ""
    per_param: dict[str, float] = {}
    for param in params:
        analytic = param.grad
        values = param.value
        tensor_worst = 0.0
        flat = values.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            loss_plus = loss_fn()
            flat[i] = orig - h
            loss_minus = loss_fn()
            flat[i] = orig
            numeric = (loss_plus - loss_minus) / (2.0 * h)
            a = flat_grad[i]
            denom = max(abs(a) + abs(numeric), denom_floor)
            rel = abs(a - numeric) / denom
            if rel > tensor_worst:
                tensor_worst = rel
        per_param[param.name] = tensor_worst
        if tensor_worst > worst:
            worst = tensor_worst
            worst_name = param.name
    return GradCheckResult(
        max_rel_error=worst, worst_param=worst_name, tolerance=tolerance, per_param=per_param
    )
