"""From-scratch numerical engine: layers, losses, Adam, gradient checking."""

from .nn import (
    Conv1d,
    Dense,
    Dropout,
    GlobalAvgPool1d,
    ParamTensor,
    ShapeError,
    SiLU,
    collect_params,
    dropout,
    mse_grad,
    mse_loss,
    nll_loss,
    sigmoid,
    softmax2,
    softmax_nll_grad,
)
from .optim import OptimizerConfig, StaleStepError, adam_step, adam_step_all
from .gradcheck import GradCheckResult, grad_check
from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    parse_header,
    restore_params,
    save_checkpoint,
)

__all__ = [
    "Conv1d",
    "Dense",
    "Dropout",
    "GlobalAvgPool1d",
    "ParamTensor",
    "ShapeError",
    "SiLU",
    "collect_params",
    "dropout",
    "mse_grad",
    "mse_loss",
    "nll_loss",
    "sigmoid",
    "softmax2",
    "softmax_nll_grad",
    "OptimizerConfig",
    "StaleStepError",
    "adam_step",
    "adam_step_all",
    "GradCheckResult",
    "grad_check",
    "CheckpointError",
    "load_checkpoint",
    "parse_header",
    "restore_params",
    "save_checkpoint",
]
