from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError
from .params import ParamSet


def adamw_step(params: ParamSet, lr: float, weight_decay: float = 1e-4, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One AdamW update over every parameter, then clear the gradient buffers.

    Weight decay is decoupled: ``theta -= lr * wd * theta`` is applied on its
    own, before the bias-corrected moment step.
    """
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, theta in params.values.items():
        g = params.grads[name]
        m = params.first_moment[name]
        v = params.second_moment[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if weight_decay:
            theta -= lr * weight_decay * theta
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    params.zero_grad()


@dataclass
class ScheduleState:
    step: int
    total_steps: int
    lr0: float = 5e-4
    lr_min: float = 0.0

    def __post_init__(self) -> None:
        if self.total_steps <= 0:
            raise ConfigurationError("total_steps must be positive")
        if not 0 <= self.step <= self.total_steps:
            raise ConfigurationError(f"step {self.step} outside [0, {self.total_steps}]")
        if self.lr_min < 0 or self.lr0 < self.lr_min:
            raise ConfigurationError("need lr0 >= lr_min >= 0")


def cosine_lr(state: ScheduleState) -> float:
    frac = state.step / state.total_steps
    return state.lr_min + 0.5 * (state.lr0 - state.lr_min) * (1.0 + math.cos(math.pi * frac))


def linear_schedule(step: int, total: int, start: float, end: float) -> float:
    """Linear interpolation from ``start`` to ``end``; ``step`` is clamped to ``[0, total]``."""
    if total <= 0:
        raise ConfigurationError("total must be positive")
    frac = min(max(step / total, 0.0), 1.0)
    return start + (end - start) * frac
