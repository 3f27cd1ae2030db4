"""Minimal numpy tensor engine: autodiff, layers, losses and AdamW."""

from .functional import (
    bce_with_logits,
    dropout,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    masked_cross_entropy,
    relu,
    sigmoid,
    softmax,
    tanh,
)
from .gradcheck import grad_check
from .optim import (
    OptimizerState,
    Schedule,
    adamw_step,
    clip_grads,
    collect_grads,
    decays,
    lr_at,
    zero_grads,
)
from .tensor import (
    Tensor,
    concat,
    default_dtype,
    embedding,
    matmul,
    no_grad,
    parameter,
    precision,
    set_default_dtype,
    stack,
    tensor,
)

__all__ = [
    "Tensor",
    "tensor",
    "parameter",
    "matmul",
    "concat",
    "stack",
    "embedding",
    "no_grad",
    "precision",
    "default_dtype",
    "set_default_dtype",
    "relu",
    "sigmoid",
    "gelu",
    "tanh",
    "softmax",
    "log_softmax",
    "linear",
    "layer_norm",
    "dropout",
    "bce_with_logits",
    "masked_cross_entropy",
    "Schedule",
    "lr_at",
    "OptimizerState",
    "adamw_step",
    "collect_grads",
    "zero_grads",
    "clip_grads",
    "decays",
    "grad_check",
]
