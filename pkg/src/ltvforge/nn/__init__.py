"""Minimal float64 dense-network substrate with hand-written backward passes."""

from .gradcheck import grad_check, relative_error
from .layers import (
    MLP,
    BatchNorm,
    Dense,
    Embedding,
    ForwardContext,
    activation,
    activation_backward,
    batch_norm,
    dense,
    dropout_mask,
    embedding_backward,
    embedding_lookup,
    sigmoid,
    softplus,
)
from .optim import ScheduleState, adamw_step, cosine_lr, linear_schedule
from .params import ParamSet

__all__ = [
    "MLP", "BatchNorm", "Dense", "Embedding", "ForwardContext", "ParamSet", "ScheduleState",
    "activation", "activation_backward", "adamw_step", "batch_norm", "cosine_lr", "dense",
    "dropout_mask", "embedding_backward", "embedding_lookup", "grad_check", "linear_schedule",
    "relative_error", "sigmoid", "softplus",
]
