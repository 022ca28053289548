"""AdamW with decoupled weight decay and a warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericsError, ScheduleError
from .tensor import Tensor


@dataclass
class LrSchedule:
    total_steps: int
    warmup_steps: int = 0

    def __post_init__(self):
        if self.total_steps <= 0:
            raise ConfigError(f"total_steps must be positive, got {self.total_steps}")
        if not 0 <= self.warmup_steps < self.total_steps:
            raise ConfigError(
                f"warmup_steps must lie in [0, total_steps), got {self.warmup_steps}"
            )


def cosine_lr(step: int, schedule: LrSchedule, lr_max: float, lr_min: float = 0.0) -> float:
    """Linear warmup to lr_max, then cosine decay to lr_min at total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise ScheduleError(
            f"step {step} outside schedule range [0, {schedule.total_steps}]"
        )
    if step < schedule.warmup_steps:
        return lr_max * step / schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / (schedule.total_steps - schedule.warmup_steps)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimizerState:
    """AdamW state: step count, per-parameter moments, and hyperparameters."""

    lr_max: float
    lr_min: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.beta1 < 1.0 or not 0.0 < self.beta2 < 1.0:
            raise ConfigError(f"betas must lie in (0,1), got ({self.beta1}, {self.beta2})")
        if not 0.0 < self.epsilon < 1e-2:
            raise ConfigError(f"epsilon must lie in (0, 1e-2), got {self.epsilon}")
        if self.lr_max < 0 or self.weight_decay < 0:
            raise ConfigError("lr_max and weight_decay must be non-negative")


def adamw_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
               state: OptimizerState, lr_t: float) -> None:
    """One AdamW update in place: theta -= lr_t * (m_hat/(sqrt(v_hat)+eps) + wd*theta).

    Weight decay is decoupled from the adaptive term. A non-finite gradient
    aborts the step before any parameter or state mutation.
    """
    for name, grad in grads.items():
        if grad.shape != params[name].data.shape:
            raise ConfigError(
                f"gradient shape {grad.shape} does not match parameter "
                f"{name!r} shape {params[name].data.shape}"
            )
        if not np.all(np.isfinite(grad)):
            raise NumericsError(f"non-finite gradient for parameter {name!r}; step aborted")

    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, grad in grads.items():
        theta = params[name].data
        m = state.first_moment.setdefault(name, np.zeros_like(theta))
        v = state.second_moment.setdefault(name, np.zeros_like(theta))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= lr_t * (m_hat / (np.sqrt(v_hat) + state.epsilon)
                         + state.weight_decay * theta)
